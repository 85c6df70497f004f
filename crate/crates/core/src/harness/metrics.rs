//! Detection events, OSPA association and interval estimates.

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF};

use crate::model::{wrap_angle, DispersionVector, SPEED_OF_LIGHT};

/// Outcome of classifying one single-component trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFlags {
    pub false_detection: bool,
    pub missed_detection: bool,
}

/// Rectangle around the true dispersion point with half-sides
/// `multiplier * sqrt(crb)` in delay and angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: DispersionVector,
    pub half_tau: f64,
    pub half_phi: f64,
}

impl Region {
    pub fn new(center: DispersionVector, crb_tau: f64, crb_phi: f64, multiplier: f64) -> Self {
        Self {
            center,
            half_tau: multiplier * crb_tau.sqrt(),
            half_phi: multiplier * crb_phi.sqrt(),
        }
    }

    pub fn contains(&self, psi: &DispersionVector) -> bool {
        (psi.tau - self.center.tau).abs() <= self.half_tau
            && wrap_angle(psi.phi - self.center.phi).abs() <= self.half_phi
    }
}

/// A false detection is any detected point outside the region; a missed
/// detection means nothing was detected inside it.
pub fn classify_events(
    detections: &[DispersionVector],
    truth: &DispersionVector,
    crb_tau: f64,
    crb_phi: f64,
    multiplier: f64,
) -> EventFlags {
    let region = Region::new(*truth, crb_tau, crb_phi, multiplier);
    let inside = detections.iter().filter(|p| region.contains(p)).count();
    EventFlags {
        false_detection: inside < detections.len(),
        missed_detection: inside == 0,
    }
}

/// OSPA parameters on coordinates normalized by the resolution limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OspaSettings {
    pub cutoff: f64,
    pub order: f64,
    pub rrl_distance_m: f64,
    pub rrl_angle: f64,
}

/// Errors of one associated pair, estimate minus truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub detection: usize,
    pub truth: usize,
    pub delta_d_m: f64,
    pub delta_phi: f64,
    /// Normalized distance before the cutoff.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OspaResult {
    pub ospa: f64,
    pub pairs: Vec<PairError>,
}

impl OspaSettings {
    /// Euclidean distance of `(c tau, phi)` in resolution units, angle wrapped.
    pub fn distance(&self, a: &DispersionVector, b: &DispersionVector) -> f64 {
        let dd = SPEED_OF_LIGHT * (a.tau - b.tau) / self.rrl_distance_m;
        let dp = wrap_angle(a.phi - b.phi) / self.rrl_angle;
        dd.hypot(dp)
    }

    fn cost(&self, a: &DispersionVector, b: &DispersionVector) -> f64 {
        self.distance(a, b).min(self.cutoff).powf(self.order)
    }
}

/// Quantization of the assignment costs for the integer solver.
const COST_SCALE: f64 = 1e12;

/// Optimal subpattern assignment between detections and truth.
pub fn ospa_associate(detections: &[DispersionVector], truth: &[DispersionVector], s: &OspaSettings) -> OspaResult {
    let (m, n) = (detections.len(), truth.len());
    let big = m.max(n);
    if big == 0 {
        return OspaResult {
            ospa: 0.0,
            pairs: Vec::new(),
        };
    }
    let cp = s.cutoff.powf(s.order);
    let small = m.min(n);
    let mut pairs = Vec::with_capacity(small);
    let mut total = 0.0;
    if small > 0 {
        // rows must be the smaller set
        let det_rows = m <= n;
        let (rows, cols) = if det_rows { (m, n) } else { (n, m) };
        let cost_of = |r: usize, c: usize| {
            let (i, j) = if det_rows { (r, c) } else { (c, r) };
            s.cost(&detections[i], &truth[j])
        };
        let weights = Matrix::from_fn(rows, cols, |(r, c)| (cost_of(r, c) / cp * COST_SCALE).round() as i64);
        let (_, assign) = kuhn_munkres_min(&weights);
        for (r, &c) in assign.iter().enumerate() {
            let (i, j) = if det_rows { (r, c) } else { (c, r) };
            let (d, t) = (&detections[i], &truth[j]);
            total += s.cost(d, t);
            pairs.push(PairError {
                detection: i,
                truth: j,
                delta_d_m: SPEED_OF_LIGHT * (d.tau - t.tau),
                delta_phi: wrap_angle(d.phi - t.phi),
                distance: s.distance(d, t),
            });
        }
        pairs.sort_by_key(|p| p.truth);
    }
    total += cp * (big - small) as f64;
    OspaResult {
        ospa: (total / big as f64).powf(1.0 / s.order),
        pairs,
    }
}

/// Clopper–Pearson interval for `k` successes out of `n`.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let a = (1.0 - level) / 2.0;
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64).map(|b| b.inverse_cdf(a)).unwrap_or(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64).map(|b| b.inverse_cdf(1.0 - a)).unwrap_or(1.0)
    };
    (lo, hi)
}

/// Central `level` acceptance interval of the frequency `K/n` for
/// `K ~ Binomial(n, p)`.
pub fn binomial_acceptance(p: f64, n: u64, level: f64) -> (f64, f64) {
    let p = p.clamp(0.0, 1.0);
    if n == 0 {
        return (0.0, 1.0);
    }
    let a = (1.0 - level) / 2.0;
    match Binomial::new(p, n) {
        Ok(b) => {
            // inverse_cdf gives the smallest k with CDF(k) >= x
            let lo = b.inverse_cdf(a);
            let hi = b.inverse_cdf(1.0 - a);
            (lo as f64 / n as f64, hi as f64 / n as f64)
        }
        Err(_) => (0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn settings() -> OspaSettings {
        OspaSettings {
            cutoff: 2.0,
            order: 2.0,
            rrl_distance_m: 0.3,
            rrl_angle: 56f64.to_radians(),
        }
    }

    fn psi(d_m: f64, phi_deg: f64) -> DispersionVector {
        DispersionVector::new(d_m / SPEED_OF_LIGHT, phi_deg.to_radians())
    }

    #[test]
    fn events_follow_the_definitions() {
        let t = psi(3.0, 10.0);
        let (ct, cp) = (1e-22, 1e-4);
        assert_eq!(
            classify_events(&[], &t, ct, cp, 5.0),
            EventFlags {
                false_detection: false,
                missed_detection: true
            }
        );
        assert_eq!(
            classify_events(&[t], &t, ct, cp, 5.0),
            EventFlags {
                false_detection: false,
                missed_detection: false
            }
        );
        let far = psi(4.0, 10.0);
        assert_eq!(
            classify_events(&[t, far], &t, ct, cp, 5.0),
            EventFlags {
                false_detection: true,
                missed_detection: false
            }
        );
        assert_eq!(
            classify_events(&[far], &t, ct, cp, 5.0),
            EventFlags {
                false_detection: true,
                missed_detection: true
            }
        );
    }

    #[test]
    fn region_wraps_angles() {
        let t = DispersionVector::new(1e-9, std::f64::consts::PI - 0.01);
        let r = Region::new(t, 1e-24, 1e-4, 5.0);
        assert!(r.contains(&DispersionVector::new(1e-9, -std::f64::consts::PI + 0.02)));
    }

    #[test]
    fn identical_sets_have_zero_ospa() {
        let x = [psi(1.0, 0.0), psi(2.0, 40.0), psi(2.5, -70.0)];
        let r = ospa_associate(&x, &x, &settings());
        assert!(r.ospa.abs() < 1e-12);
        assert!(r.pairs.iter().all(|p| p.detection == p.truth));
    }

    #[test]
    fn empty_detections_cost_the_cutoff() {
        let x = [psi(1.0, 0.0), psi(2.0, 40.0)];
        let r = ospa_associate(&[], &x, &settings());
        assert!((r.ospa - 2.0).abs() < 1e-12);
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn two_by_two_matches_brute_force() {
        let s = settings();
        let det = [psi(1.1, 35.0), psi(0.95, 3.0)];
        let tru = [psi(1.0, 0.0), psi(1.05, 40.0)];
        let id = s.cost(&det[0], &tru[0]) + s.cost(&det[1], &tru[1]);
        let swap = s.cost(&det[0], &tru[1]) + s.cost(&det[1], &tru[0]);
        let r = ospa_associate(&det, &tru, &s);
        assert!((r.ospa - (id.min(swap) / 2.0).sqrt()).abs() < 1e-9);
        assert!(swap < id);
        assert_eq!(r.pairs[0].detection, 1);
        assert_eq!(r.pairs[1].detection, 0);
    }

    #[test]
    fn binomial_intervals_are_sane() {
        let (lo, hi) = clopper_pearson(50, 500, 0.95);
        assert!(lo < 0.1 && hi > 0.1 && lo > 0.07 && hi < 0.13);
        let (lo, hi) = binomial_acceptance(0.1, 500, 0.95);
        assert!(lo < 0.1 && hi > 0.1 && lo > 0.07 && hi < 0.13);
        assert_eq!(clopper_pearson(0, 10, 0.95).0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    proptest! {
        #[test]
        fn ospa_is_bounded_and_symmetric(
            a in prop::collection::vec((0.0f64..5.0, -180.0f64..180.0), 0..5),
            b in prop::collection::vec((0.0f64..5.0, -180.0f64..180.0), 0..5),
        ) {
            let x: Vec<_> = a.iter().map(|&(d, p)| psi(d, p)).collect();
            let y: Vec<_> = b.iter().map(|&(d, p)| psi(d, p)).collect();
            let s = settings();
            let r1 = ospa_associate(&x, &y, &s).ospa;
            let r2 = ospa_associate(&y, &x, &s).ospa;
            prop_assert!(r1 >= 0.0 && r1 <= s.cutoff + 1e-12);
            prop_assert!((r1 - r2).abs() < 1e-6);
        }
    }
}
