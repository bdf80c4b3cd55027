//! Validation statistics: Welch two-sample t-test, two-sample
//! Kolmogorov–Smirnov test, and ME/MAE/RMSE/MAPE/RMSPE.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{test} needs at least {need} samples per group, got {a} and {b}")]
    TooFew {
        test: &'static str,
        need: usize,
        a: usize,
        b: usize,
    },
    #[error("non-finite sample value")]
    NonFinite,
    #[error("observed and simulated lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("observed value must be positive for percentage errors, got {0}")]
    NonPositiveObserved(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    /// max |F_a − F_b|
    pub statistic: f64,
    pub p_value: f64,
}

fn finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, ss / (n - 1.0))
}

/// Two-sided Welch t-test (unequal variances).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFew {
            test: "t-test",
            need: 2,
            a: a.len(),
            b: b.len(),
        });
    }
    finite(a)?;
    finite(b)?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let qa = va / na;
    let qb = vb / nb;
    let se2 = qa + qb;
    if se2 == 0.0 {
        let same = ma == mb;
        return Ok(TTest {
            statistic: if same { 0.0 } else { f64::INFINITY.copysign(ma - mb) },
            df: na + nb - 2.0,
            p_value: if same { 1.0 } else { 0.0 },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        statistic: t,
        df,
        p_value: p,
    })
}

/// Kolmogorov survival function `Q(λ) = P(K > λ)`.
///
/// Alternating series `2 Σ (−1)^(k−1) exp(−2k²λ²)` for λ ≥ 1, where it
/// converges in a handful of terms; for smaller λ the equivalent theta
/// form `1 − √(2π)/λ · Σ exp(−(2k−1)²π²/(8λ²))` is used instead. Both
/// sums stop at 100 terms or once a term falls below 1e−10 relative.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    const TERMS: usize = 100;
    const EPS: f64 = 1e-10;
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.0 {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=TERMS {
            let j = (2 * k - 1) as f64;
            let term = (-j * j * c).exp();
            sum += term;
            if term <= EPS * sum {
                break;
            }
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=TERMS {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term <= EPS * sum.abs() {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Largest gap between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample K-S test with the asymptotic p-value `Q(√(nm/(n+m)) · D)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFew {
            test: "K-S test",
            need: 1,
            a: a.len(),
            b: b.len(),
        });
    }
    finite(a)?;
    finite(b)?;
    let d = ks_statistic(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let en = (n * m / (n + m)).sqrt();
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_q(en * d),
    })
}

/// The five goodness-of-fit measures. Errors are simulated − observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofReport {
    pub me: f64,
    pub mae: f64,
    pub rmse: f64,
    /// percent
    pub mape: f64,
    /// percent
    pub rmspe: f64,
}

pub fn goodness_of_fit(observed: &[f64], simulated: &[f64]) -> Result<GofReport, StatsError> {
    if observed.len() != simulated.len() {
        return Err(StatsError::LengthMismatch(observed.len(), simulated.len()));
    }
    if observed.is_empty() {
        return Err(StatsError::TooFew {
            test: "goodness of fit",
            need: 1,
            a: 0,
            b: 0,
        });
    }
    finite(observed)?;
    finite(simulated)?;
    if let Some(&o) = observed.iter().find(|&&o| o <= 0.0) {
        return Err(StatsError::NonPositiveObserved(o));
    }
    let n = observed.len() as f64;
    let (mut me, mut mae, mut mse, mut mape, mut mspe) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&o, &s) in observed.iter().zip(simulated) {
        let e = s - o;
        me += e;
        mae += e.abs();
        mse += e * e;
        mape += e.abs() / o;
        mspe += (e / o) * (e / o);
    }
    Ok(GofReport {
        me: me / n,
        mae: mae / n,
        rmse: (mse / n).sqrt(),
        mape: mape / n * 100.0,
        rmspe: (mspe / n).sqrt() * 100.0,
    })
}

/// One travel-time observation, minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeSample {
    pub route: String,
    pub direction: String,
    pub vehicle_type: String,
    pub regime: String,
    pub value_min: f64,
}

impl TravelTimeSample {
    pub fn cell(&self) -> CellKey {
        CellKey {
            route: self.route.clone(),
            direction: self.direction.clone(),
            vehicle_type: self.vehicle_type.clone(),
            regime: self.regime.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub route: String,
    pub direction: String,
    pub vehicle_type: String,
    pub regime: String,
}

/// One row of the validation table. Tests that cannot run on the cell's
/// sample sizes are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub key: CellKey,
    pub n_observed: usize,
    pub n_simulated: usize,
    pub p_t: Option<f64>,
    pub p_ks: Option<f64>,
    pub gof: Option<GofReport>,
}

/// Compare observed and simulated travel times cell by cell.
///
/// The tests are unpaired on the raw samples. For the error measures each
/// observed value is paired with the mean of the cell's simulated values.
/// Cells present on only one side are reported with `None` fields.
pub fn validate_cells(observed: &[TravelTimeSample], simulated: &[TravelTimeSample]) -> Result<Vec<CellReport>, StatsError> {
    let mut cells: BTreeMap<CellKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in observed {
        cells.entry(s.cell()).or_default().0.push(s.value_min);
    }
    for s in simulated {
        cells.entry(s.cell()).or_default().1.push(s.value_min);
    }
    let mut out = Vec::with_capacity(cells.len());
    for (key, (obs, sim)) in cells {
        let p_t = welch_t_test(&obs, &sim).ok().map(|t| t.p_value);
        let p_ks = ks_two_sample(&obs, &sim).ok().map(|k| k.p_value);
        let gof = if obs.is_empty() || sim.is_empty() {
            None
        } else {
            let m = sim.iter().sum::<f64>() / sim.len() as f64;
            Some(goodness_of_fit(&obs, &vec![m; obs.len()])?)
        };
        out.push(CellReport {
            key,
            n_observed: obs.len(),
            n_simulated: sim.len(),
            p_t,
            p_ks,
            gof,
        });
    }
    Ok(out)
}
