pub mod agreement;
pub mod dataset;
pub mod latency;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod service;
pub mod stats;
pub mod synthetic;
pub mod table;

// The guide's snippets compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/keypoints.md")]
    mod keypoints {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/latency.md")]
    mod latency {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
}
