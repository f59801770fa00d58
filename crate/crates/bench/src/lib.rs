//! Shared fixtures for the benchmarks.

use evoheur::insights::{InsightPool, PoolConfig};
use evoheur::problems::{bpp, fssp, tsp};

pub fn tsp_instance(n: usize) -> tsp::TspInstance {
    tsp::gen_tsp(n, 7).expect("n >= 3")
}

pub fn bpp_instance(items: usize) -> bpp::BppInstance {
    bpp::gen_bpp_weibull(items, 100, 7).expect("items >= 1")
}

pub fn fssp_instance(n: usize, m: usize) -> fssp::FsspInstance {
    fssp::gen_fssp(n, m, 7).expect("n, m >= 1")
}

/// Distinct principle texts: no two share more than a few tokens.
pub fn principle(i: usize) -> String {
    format!("Principle {i} favours alpha{i} beta{i} gamma{i} delta{i} when scoring candidates")
}

/// A pool seeded and then filled to capacity with distinct principles.
pub fn full_pool() -> InsightPool {
    let mut pool = InsightPool::new(PoolConfig::default());
    pool.seed().expect("fresh pool");
    let mut i = 0;
    while pool.len() < pool.config().capacity {
        pool.admit(&principle(i), 1);
        i += 1;
    }
    pool
}
