//! Synthetic benchmark tasks for the learners. Everything here is a pure
//! function of its seed.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::SimMode;
use crate::error::{Error, Result};
use crate::learn::{Classifier, Clusterer};
use crate::ram::{Core, CoreConfig};
use crate::spike::{SpikePattern, SpikeSpace};

pub const POSITIVE: &str = "pos";
pub const NEGATIVE: &str = "neg";

#[derive(Debug, Clone, PartialEq)]
pub struct Labelled {
    pub pattern: SpikePattern,
    pub label: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyData {
    pub space: SpikeSpace,
    /// Hidden ±1 channel weights that define the labels.
    pub weights: Vec<i32>,
    pub train: Vec<Labelled>,
    pub test: Vec<Labelled>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifyKnobs {
    pub channels: usize,
    pub k: usize,
    pub train: usize,
    pub test: usize,
    pub epochs: usize,
}

impl Default for ClassifyKnobs {
    fn default() -> Self {
        Self {
            channels: 16,
            k: 4,
            train: 200,
            test: 200,
            epochs: 10,
        }
    }
}

fn sample_ids(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    pool.choose_multiple(rng, k).copied().collect()
}

/// Linearly separable sparse patterns. Half the channels carry weight +1
/// and half −1; a pattern's label is the sign of its weight sum, and
/// patterns summing to zero are redrawn.
pub fn classification_data(seed: u64, knobs: &ClassifyKnobs) -> Result<ClassifyData> {
    if knobs.channels < 2 || !knobs.channels.is_multiple_of(2) {
        return Err(Error::Domain("channel count must be even and at least 2".into()));
    }
    // With balanced weights a pattern covering every channel sums to zero.
    if knobs.k == 0 || knobs.k >= knobs.channels {
        return Err(Error::Domain(format!(
            "cannot draw unambiguous patterns with k={} from {} channels",
            knobs.k, knobs.channels
        )));
    }
    let space = SpikeSpace::new(knobs.channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<i32> = (0..knobs.channels)
        .map(|c| if c < knobs.channels / 2 { 1 } else { -1 })
        .collect();
    weights.shuffle(&mut rng);
    let pool: Vec<usize> = (0..knobs.channels).collect();
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Labelled>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let ids = sample_ids(rng, &pool, knobs.k);
            let sum: i32 = ids.iter().map(|&i| weights[i]).sum();
            if sum == 0 {
                continue;
            }
            out.push(Labelled {
                pattern: SpikePattern::from_unsorted(ids, space)?,
                label: if sum > 0 { POSITIVE } else { NEGATIVE },
            });
        }
        Ok(out)
    };
    let train = draw(knobs.train, &mut rng)?;
    let test = draw(knobs.test, &mut rng)?;
    Ok(ClassifyData {
        space,
        weights,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutcome {
    pub accuracy: f64,
    pub train_steps: usize,
    pub epochs: usize,
}

fn core_for(synapses: usize, mode: SimMode, seed: u64) -> Result<Core> {
    let log2 = synapses.next_power_of_two().trailing_zeros().max(4);
    Core::new(CoreConfig {
        log2_capacity: log2,
        mode,
        seed,
        ..CoreConfig::default()
    })
}

pub fn accuracy(clf: &Classifier, core: &mut Core, set: &[Labelled]) -> Result<f64> {
    let mut correct = 0;
    for item in set {
        let ranking = clf.classify(core, &item.pattern)?;
        if ranking[0].label == item.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len().max(1) as f64)
}

pub fn run_classification(seed: u64, mode: SimMode, knobs: &ClassifyKnobs) -> Result<ClassifyOutcome> {
    let data = classification_data(seed, knobs)?;
    let mut core = core_for(2 * knobs.channels, mode, seed)?;
    core.set_logging(false);
    let mut clf = Classifier::new(&mut core, &[POSITIVE, NEGATIVE], data.space)?;
    let mut steps = 0;
    for _ in 0..knobs.epochs {
        for item in &data.train {
            clf.train_step(&mut core, &item.pattern, item.label)?;
            steps += 1;
        }
    }
    Ok(ClassifyOutcome {
        accuracy: accuracy(&clf, &mut core, &data.test)?,
        train_steps: steps,
        epochs: knobs.epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterKnobs {
    pub channels: usize,
    pub k: usize,
    pub steps: usize,
    pub features: usize,
}

impl Default for ClusterKnobs {
    fn default() -> Self {
        Self {
            channels: 16,
            k: 4,
            steps: 500,
            features: 2,
        }
    }
}

/// Two disjoint blobs: blob 0 draws `k` of the lower half of the channels,
/// blob 1 `k` of the upper half. Returns `(pattern, blob)` pairs.
pub fn cluster_data(seed: u64, knobs: &ClusterKnobs) -> Result<(SpikeSpace, Vec<(SpikePattern, usize)>)> {
    let half = knobs.channels / 2;
    if half == 0 || knobs.k == 0 || knobs.k > half {
        return Err(Error::Domain(format!(
            "cannot draw k={} from half of {} channels",
            knobs.k, knobs.channels
        )));
    }
    let space = SpikeSpace::new(knobs.channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower: Vec<usize> = (0..half).collect();
    let upper: Vec<usize> = (half..2 * half).collect();
    let mut out = Vec::with_capacity(knobs.steps);
    for _ in 0..knobs.steps {
        let blob = rng.random_range(0..2usize);
        let ids = sample_ids(&mut rng, if blob == 0 { &lower } else { &upper }, knobs.k);
        out.push((SpikePattern::from_unsorted(ids, space)?, blob));
    }
    Ok((space, out))
}

/// Fraction of items whose assigned cluster's majority class matches their
/// own class.
pub fn purity(assigned: &[usize], truth: &[usize]) -> f64 {
    if assigned.is_empty() {
        return 0.0;
    }
    let clusters = assigned.iter().max().map_or(0, |m| m + 1);
    let classes = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; classes]; clusters];
    for (&a, &t) in assigned.iter().zip(truth) {
        counts[a][t] += 1;
    }
    let majority: usize = counts.iter().map(|row| row.iter().max().copied().unwrap_or(0)).sum();
    majority as f64 / assigned.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub purity: f64,
    pub steps: usize,
    pub assignments: Vec<usize>,
}

pub fn run_clustering(seed: u64, mode: SimMode, knobs: &ClusterKnobs) -> Result<ClusterOutcome> {
    let (space, data) = cluster_data(seed, knobs)?;
    let mut core = core_for(knobs.features * (knobs.channels + 1), mode, seed)?;
    core.set_logging(false);
    let clu = Clusterer::new(&mut core, knobs.features, space)?;
    let mut assigned = Vec::with_capacity(data.len());
    for (x, _) in &data {
        assigned.push(clu.cluster_step(&mut core, x)?);
    }
    let truth: Vec<usize> = data.iter().map(|(_, b)| *b).collect();
    Ok(ClusterOutcome {
        purity: purity(&assigned, &truth),
        steps: data.len(),
        assignments: assigned,
    })
}
