//! Runs the guide's listings as doctests; mdbook cannot resolve crate
//! dependencies on its own. One module per chapter so a failure names it.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(frames, "frames.md");
chapter!(tube, "tube.md");
chapter!(projection, "projection.md");
chapter!(filtering, "filtering.md");
chapter!(kdtree, "kdtree.md");
chapter!(registration, "registration.md");
chapter!(poisson, "poisson.md");
chapter!(metrics, "metrics.md");
chapter!(pipeline, "pipeline.md");
