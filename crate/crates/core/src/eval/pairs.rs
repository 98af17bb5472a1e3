use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{hamming_match, IrisCode};
use crate::error::{Error, Result};
use crate::iris::NormalizedIris;
use crate::model::AfinetModel;

/// Angle imposed on the second member of every pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "20")]
    Deg20,
    #[serde(rename = "45")]
    Deg45,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::None, Regime::Deg0, Regime::Deg20, Regime::Deg45];

    pub fn angle_deg(self) -> f64 {
        match self {
            Regime::None | Regime::Deg0 => 0.0,
            Regime::Deg20 => 20.0,
            Regime::Deg45 => 45.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Deg0 => "0",
            Regime::Deg20 => "20",
            Regime::Deg45 => "45",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.label() == s.trim_end_matches("deg"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
    pub angle_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub regime: Regime,
    pub pairs: Vec<Pair>,
}

/// Upper bounds on pair counts; `None` keeps every pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub genuine: Option<usize>,
    pub impostor: Option<usize>,
}

impl PairCounts {
    pub fn exhaustive() -> Self {
        Self::default()
    }
}

fn subsample(
    all: Vec<(usize, usize)>,
    limit: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    match limit {
        Some(n) if n < all.len() => {
            let mut idx = rand::seq::index::sample(rng, all.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    }
}

/// Unordered pairs `a < b` of distinct samples: genuine within a class,
/// impostor across classes. Genuine pairs come first.
pub fn make_pairs(
    labels: &[usize],
    regime: Regime,
    counts: PairCounts,
    seed: u64,
) -> Result<PairSet> {
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "pair set",
            format!("need at least 2 classes, found {}", classes.len()),
        ));
    }
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            if labels[a] == labels[b] {
                genuine.push((a, b));
            } else {
                impostor.push((a, b));
            }
        }
    }
    if genuine.is_empty() {
        return Err(Error::invalid("pair set", "no class has two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genuine = subsample(genuine, counts.genuine, &mut rng);
    let impostor = subsample(impostor, counts.impostor, &mut rng);
    let angle_deg = regime.angle_deg();
    let pairs = genuine
        .into_iter()
        .map(|p| (p, true))
        .chain(impostor.into_iter().map(|p| (p, false)))
        .map(|((a, b), genuine)| Pair {
            a,
            b,
            genuine,
            angle_deg,
        })
        .collect();
    Ok(PairSet { regime, pairs })
}

impl PairSet {
    fn check(&self, n: usize) -> Result<()> {
        match self.pairs.iter().find(|p| p.a >= n || p.b >= n) {
            Some(p) => Err(Error::invalid(
                "pair set",
                format!("pair ({}, {}) refers past {n} samples", p.a, p.b),
            )),
            None => Ok(()),
        }
    }

    /// Splits per-pair scores into (genuine, impostor).
    pub fn split_scores(&self, scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut g, mut i) = (Vec::new(), Vec::new());
        for (p, &s) in self.pairs.iter().zip(scores) {
            if p.genuine {
                g.push(s)
            } else {
                i.push(s)
            }
        }
        (g, i)
    }
}

/// Key for an image under an imposed rotation.
fn view_key(index: usize, angle_deg: f64) -> (usize, u64) {
    (index, angle_deg.to_bits())
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Cosine similarity of the matching features; each distinct
/// (image, angle) view is embedded once.
pub fn score_pairs_deep(
    model: &AfinetModel,
    images: &[NormalizedIris],
    pairs: &PairSet,
) -> Result<Vec<f64>> {
    pairs.check(images.len())?;
    let mut views: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    let mut rendered = Vec::new();
    for p in &pairs.pairs {
        for (i, angle) in [(p.a, 0.0), (p.b, p.angle_deg)] {
            views.entry(view_key(i, angle)).or_insert_with(|| {
                rendered.push(images[i].rotate(angle));
                rendered.len() - 1
            });
        }
    }
    let refs: Vec<_> = rendered.iter().collect();
    let features = model.embed(&refs)?;
    Ok(pairs
        .pairs
        .iter()
        .map(|p| {
            let fa = &features[views[&view_key(p.a, 0.0)]];
            let fb = &features[views[&view_key(p.b, p.angle_deg)]];
            cosine(fa, fb)
        })
        .collect())
}

/// Similarity `1 − HD` of iris codes, with HD minimized over
/// `±shift_range` column shifts.
pub fn score_pairs_codes(
    images: &[NormalizedIris],
    pairs: &PairSet,
    shift_range: usize,
    encode: impl Fn(&NormalizedIris) -> IrisCode,
) -> Result<Vec<f64>> {
    pairs.check(images.len())?;
    let mut codes: BTreeMap<(usize, u64), IrisCode> = BTreeMap::new();
    for p in &pairs.pairs {
        for (i, angle) in [(p.a, 0.0), (p.b, p.angle_deg)] {
            codes
                .entry(view_key(i, angle))
                .or_insert_with(|| encode(&images[i].rotate(angle)));
        }
    }
    pairs
        .pairs
        .iter()
        .map(|p| {
            let a = &codes[&view_key(p.a, 0.0)];
            let b = &codes[&view_key(p.b, p.angle_deg)];
            Ok(1.0 - hamming_match(a, b, shift_range)?.distance)
        })
        .collect()
}
