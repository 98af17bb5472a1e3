use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FAR_LEVELS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Operating point: a pair is accepted when its score is `>= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFar {
    pub far_level: f64,
    /// `None` when no threshold reaches the level.
    pub frr: Option<f64>,
    pub threshold: Option<f64>,
    /// False when there are fewer than `10 / far_level` impostor scores.
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// One point per distinct score, thresholds ascending.
    pub points: Vec<RocPoint>,
    pub eer: f64,
    pub frr_at_far: Vec<FrrAtFar>,
}

fn sorted(scores: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid(what, "no scores"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(what, format!("non-finite score {s}")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Threshold sweep over every distinct score of either set.
pub fn roc_points(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    let g = sorted(genuine, "genuine scores")?;
    let i = sorted(impostor, "impostor scores")?;
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    // Counts strictly below the threshold, advanced monotonically.
    let (mut gi, mut ii) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            while gi < g.len() && g[gi] < t {
                gi += 1;
            }
            while ii < i.len() && i[ii] < t {
                ii += 1;
            }
            RocPoint {
                threshold: t,
                far: (i.len() - ii) as f64 / i.len() as f64,
                frr: gi as f64 / g.len() as f64,
            }
        })
        .collect())
}

/// Equal error rate by linear interpolation between the last point with
/// FAR > FRR and the next one. A final reject-everything point
/// (FAR 0, FRR 1) closes the curve.
pub fn eer_from_points(points: &[RocPoint]) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    let closing = std::iter::once((0.0, 1.0));
    for (far, frr) in points.iter().map(|p| (p.far, p.frr)).chain(closing) {
        if frr >= far {
            return match prev {
                None => 0.5 * (far + frr),
                Some((pfar, pfrr)) => {
                    let d0 = pfar - pfrr;
                    let d1 = far - frr;
                    let t = d0 / (d0 - d1);
                    pfar + t * (far - pfar)
                }
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("the closing point always satisfies FRR >= FAR")
}

pub fn compute_roc(genuine: &[f64], impostor: &[f64], far_levels: &[f64]) -> Result<Roc> {
    let points = roc_points(genuine, impostor)?;
    let eer = eer_from_points(&points);
    let frr_at_far = far_levels
        .iter()
        .map(|&level| {
            let hit = points.iter().find(|p| p.far <= level);
            FrrAtFar {
                far_level: level,
                frr: hit.map(|p| p.frr),
                threshold: hit.map(|p| p.threshold),
                reliable: impostor.len() as f64 >= 10.0 / level,
            }
        })
        .collect();
    Ok(Roc {
        points,
        eer,
        frr_at_far,
    })
}

impl Roc {
    /// `threshold,far,frr` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.far, p.frr));
        }
        out
    }
}
