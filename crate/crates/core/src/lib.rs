pub mod oracles;
pub mod geometry;
pub mod billiard;
pub mod quadrature;
pub mod mode;
pub mod spectral;
pub mod eigensolver;
pub mod cache;
pub mod boundary_calculus;
pub mod qe_stats;
pub mod config;
pub mod app;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/domains.md")]
    pub mod domains {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    pub mod spectrum {}
    #[doc = include_str!("../../../book/src/symbols.md")]
    pub mod symbols {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    pub mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
