//! Test-only reference computations. Nothing here calls into the likelihood,
//! weighting or estimation code under test.

#![allow(dead_code)]

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Sub};

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use psnis::linalg::Matrix;
use psnis::{ClusterModel, PatchPool, PriorModel};

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
    static LN_FACT: RefCell<Vec<Hp>> = const { RefCell::new(Vec::new()) };
}

/// 256-bit float with just enough arithmetic for the oracles.
#[derive(Clone, Debug)]
pub struct Hp(BigFloat);

impl Hp {
    pub fn ln(&self) -> Hp {
        CONSTS.with(|c| Hp(self.0.ln(PREC, RM, &mut c.borrow_mut())))
    }

    pub fn exp(&self) -> Hp {
        CONSTS.with(|c| Hp(self.0.exp(PREC, RM, &mut c.borrow_mut())))
    }

    pub fn to_f64(&self) -> f64 {
        if self.0.is_zero() {
            return 0.0;
        }
        let s = CONSTS
            .with(|c| self.0.format(Radix::Dec, RM, &mut c.borrow_mut()))
            .expect("format");
        s.parse().expect("decimal string")
    }
}

impl Add for Hp {
    type Output = Hp;
    fn add(self, o: Hp) -> Hp {
        Hp(self.0.add(&o.0, PREC, RM))
    }
}

impl Sub for Hp {
    type Output = Hp;
    fn sub(self, o: Hp) -> Hp {
        Hp(self.0.sub(&o.0, PREC, RM))
    }
}

impl Mul for Hp {
    type Output = Hp;
    fn mul(self, o: Hp) -> Hp {
        Hp(self.0.mul(&o.0, PREC, RM))
    }
}

impl Div for Hp {
    type Output = Hp;
    fn div(self, o: Hp) -> Hp {
        Hp(self.0.div(&o.0, PREC, RM))
    }
}

pub fn hp(v: f64) -> Hp {
    Hp(BigFloat::from_f64(v, PREC))
}

/// `ln(y!)` as an extended-precision sum of logs.
pub fn ln_factorial_hp(y: u32) -> Hp {
    LN_FACT.with(|t| {
        let mut t = t.borrow_mut();
        while t.len() <= y as usize {
            let k = t.len();
            let next = if k < 2 { hp(0.0) } else { t[k - 1].clone() + hp(k as f64).ln() };
            t.push(next);
        }
        t[y as usize].clone()
    })
}

/// Poisson log-likelihood evaluated term by term in extended precision.
pub fn poisson_loglik_hp(y: &[u32], x: &[f64], floor: f64) -> Hp {
    y.iter().zip(x).fold(hp(0.0), |acc, (&yj, &xj)| {
        let xt = hp(xj.max(floor));
        let cross = if yj == 0 { hp(0.0) } else { hp(f64::from(yj)) * xt.ln() };
        acc - xt + cross - ln_factorial_hp(yj)
    })
}

/// Exact discrete posterior weights `P(y|x_j) / Σ P(y|x_i)` over a whole pool.
pub fn posterior_weights_hp(y: &[u32], pool: &[Vec<f64>], floor: f64) -> Vec<Hp> {
    let ll: Vec<Hp> = pool.iter().map(|x| poisson_loglik_hp(y, x, floor)).collect();
    let max = ll.iter().map(Hp::to_f64).fold(f64::NEG_INFINITY, f64::max);
    let lik: Vec<Hp> = ll.into_iter().map(|l| (l - hp(max)).exp()).collect();
    let total = lik.iter().cloned().fold(hp(0.0), |a, b| a + b);
    lik.into_iter().map(|l| l / total.clone()).collect()
}

/// Posterior mean of the clean patch by enumeration over the pool.
pub fn posterior_mean_hp(y: &[u32], pool: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let w = posterior_weights_hp(y, pool, floor);
    (0..pool[0].len())
        .map(|d| {
            pool.iter()
                .zip(&w)
                .fold(hp(0.0), |acc, (x, wj)| acc + wj.clone() * hp(x[d]))
                .to_f64()
        })
        .collect()
}

/// Posterior expected squared distance to `u` by enumeration over the pool.
pub fn expected_sq_error_hp(y: &[u32], u: &[f64], pool: &[Vec<f64>], floor: f64) -> f64 {
    let w = posterior_weights_hp(y, pool, floor);
    pool.iter()
        .zip(&w)
        .fold(hp(0.0), |acc, (x, wj)| {
            let d = x.iter().zip(u).fold(hp(0.0), |s, (a, b)| {
                let diff = hp(*b) - hp(*a);
                s + diff.clone() * diff
            });
            acc + wj.clone() * d
        })
        .to_f64()
}

pub fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

/// Prior over plain vectors whose clusters are exactly the given pools.
pub fn vector_model(pools: &[Vec<Vec<f64>>], floor: f64) -> PriorModel {
    let m = pools[0][0].len();
    let clusters = pools
        .iter()
        .map(|p| {
            let pool = PatchPool::from_patches(m, p.iter().map(|v| v.as_slice()), floor).unwrap();
            let mean = pool.average();
            ClusterModel::new(mean, Matrix::identity(m), pool, 1e-3).unwrap()
        })
        .collect();
    PriorModel::from_vectors(clusters, 0, 1e-3, 20.0).unwrap()
}
