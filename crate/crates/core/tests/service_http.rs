use poseval::model::{DatasetManifest, KeypointId, PoseAnnotation};
use poseval::service::{http, AnnotationService, MANIFEST_FILE};
use poseval::synthetic::gen_scene;
use poseval::table::annotations_to_string;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::Value;
use std::path::Path;

struct Server {
    base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    fn start(dir: &Path, roster: &[&str]) -> Server {
        let service = AnnotationService::open(dir, roster.iter().map(|s| s.to_string()).collect()).unwrap();
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async {
                let app = http::router(std::sync::Arc::new(std::sync::Mutex::new(service)));
                axum::serve(listener, app).with_graceful_shutdown(async { rx.await.ok(); }).await.unwrap();
            })
        });
        Server { base, stop: Some(tx), thread: Some(thread) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.take().unwrap().send(()).ok();
        self.thread.take().unwrap().join().unwrap();
    }
}

/// Two frames: f000000 is inter-rater, f000001 regular and has an image.
fn setup(dir: &Path) -> (DatasetManifest, Vec<PoseAnnotation>) {
    let (mut manifest, gts) = gen_scene(2, 200, 100, 1).unwrap();
    manifest.interrater_frames.insert("f000000".into());
    manifest.frames[1].image_path = Some("images/f000001.png".into());
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::write(dir.join("images/f000001.png"), b"\x89PNG fake").unwrap();
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json().unwrap()).unwrap();
    (manifest, gts)
}

fn as_annotator(gt: &PoseAnnotation, annotator: &str) -> PoseAnnotation {
    PoseAnnotation { annotator_id: annotator.into(), ..gt.clone() }
}

fn json(resp: reqwest::blocking::Response) -> Value {
    serde_json::from_slice(&resp.bytes().unwrap()).unwrap()
}

#[test]
fn annotation_workflow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gts) = setup(dir.path());
    let server = Server::start(dir.path(), &["ann", "bob"]);
    let client = Client::new();

    let resp = client.get(server.url("/agreement")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    assert_eq!(json(resp)["complete_frames"], 0);
    assert_eq!(client.get(server.url("/export")).send().unwrap().text().unwrap(), "frame_id,annotator_id,keypoint,x,y\n");

    let task = json(client.get(server.url("/frames/next?annotator=ann")).send().unwrap());
    assert_eq!(task["frame_id"], "f000000");
    assert_eq!(task["interrater"], true);
    assert_eq!(task["width"], 200);
    assert_eq!(client.get(server.url("/frames/next?annotator=zed")).send().unwrap().status(), StatusCode::NOT_FOUND);

    // A pose with one keypoint missing is rejected with the keypoint named.
    let csv = annotations_to_string(&[as_annotator(&gts[0], "ann")]);
    let partial: String = csv.lines().filter(|l| !l.contains(",left_ankle,")).map(|l| format!("{l}\n")).collect();
    let resp = client.post(server.url("/annotations")).body(partial).send().unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(resp)["detail"]["missing"], serde_json::json!([KeypointId::LeftAnkle]));

    // Out-of-frame point.
    let mut outside = as_annotator(&gts[0], "ann");
    outside.points[KeypointId::Nose].x = 500.0;
    let resp = client.post(server.url("/annotations")).body(annotations_to_string(&[outside])).send().unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(resp)["detail"]["violations"][0]["keypoint"], "nose");

    // Two poses in one body.
    let two = annotations_to_string(&[as_annotator(&gts[0], "ann"), as_annotator(&gts[0], "bob")]);
    assert_eq!(client.post(server.url("/annotations")).body(two).send().unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);

    // bob has not been assigned the frame yet.
    let resp = client.post(server.url("/annotations")).body(annotations_to_string(&[as_annotator(&gts[0], "bob")])).send().unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let resp = client.post(server.url("/annotations")).body(csv).send().unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(json(resp)["status"], "submitted");

    // ann moves on to the regular frame and claims it; bob still gets the
    // inter-rater frame and then nothing.
    let task = json(client.get(server.url("/frames/next?annotator=ann")).send().unwrap());
    assert_eq!(task["frame_id"], "f000001");
    let image = client.get(server.url(task["image_url"].as_str().unwrap())).send().unwrap();
    assert_eq!(image.headers()["content-type"], "image/png");
    assert_eq!(image.bytes().unwrap().as_ref(), b"\x89PNG fake");
    assert_eq!(client.get(server.url("/frames/f000000/image")).send().unwrap().status(), StatusCode::NOT_FOUND);

    let task = json(client.get(server.url("/frames/next?annotator=bob")).send().unwrap());
    assert_eq!(task["frame_id"], "f000000");
    let body = annotations_to_string(&[as_annotator(&gts[0], "bob")]);
    assert_eq!(client.post(server.url("/annotations")).body(body).send().unwrap().status(), StatusCode::OK);
    assert_eq!(client.get(server.url("/frames/next?annotator=bob")).send().unwrap().status(), StatusCode::NO_CONTENT);

    let snapshot = json(client.get(server.url("/agreement")).send().unwrap());
    assert_eq!(snapshot["complete_frames"], 1);
    assert_eq!(snapshot["baseline"]["n_raters"], 2);

    let progress = json(client.get(server.url("/progress")).send().unwrap());
    assert_eq!(progress["interrater_complete"], 1);
    assert_eq!(progress["regular_claimed"], 1);
    assert_eq!(progress["regular_submitted"], 0);
    assert_eq!(progress["submissions"], 2);
}

#[test]
fn resubmission_keeps_only_latest() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gts) = setup(dir.path());
    let server = Server::start(dir.path(), &["ann"]);
    let client = Client::new();
    client.get(server.url("/frames/next?annotator=ann")).send().unwrap();
    let first = as_annotator(&gts[0], "ann");
    let mut second = first.clone();
    second.points[KeypointId::HeadTop].x += 1.5;
    for a in [&first, &second] {
        let resp = client.post(server.url("/annotations")).body(annotations_to_string(std::slice::from_ref(a))).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
    }
    let export = client.get(server.url("/export")).send().unwrap().text().unwrap();
    assert_eq!(export, annotations_to_string(&[second]));
}
