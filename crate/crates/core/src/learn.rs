//! Learners built purely from instruction sequences on a [`Core`].
//!
//! Neither learner owns its core; several learners can share one core as
//! long as the caller serialises access.

use crate::error::{Error, Result};
use crate::node::Instruction;
use crate::ram::{Core, Partition};
use crate::spike::{SpikePattern, SpikeSpace};

/// A label with the forward electrode voltage of its node (V).
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub label: String,
    pub confidence: f64,
}

fn check_pattern(x: &SpikePattern, space: SpikeSpace) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Domain("empty spike pattern".into()));
    }
    if !x.fits(space) {
        return Err(Error::Pattern(format!(
            "pattern exceeds spike space of {}",
            space.size()
        )));
    }
    Ok(())
}

fn live_partitions(core: &Core, ids: &[u32], len: usize) -> Result<Vec<Partition>> {
    ids.iter()
        .map(|&id| {
            let p = core.partition(id).ok_or(Error::StalePartition(id))?;
            if p.len != len {
                return Err(Error::Domain(format!(
                    "partition {id} has {} synapses, expected {len}",
                    p.len
                )));
            }
            Ok(p)
        })
        .collect()
}

/// Stable sort by confidence, highest first.
fn rank(mut scored: Vec<Scored>) -> Vec<Scored> {
    scored.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    scored
}

/// One AHaH node per label. Training is supervised with `FF;RH` on the true
/// label's node and `FF;RL` on every other node.
#[derive(Debug, Clone)]
pub struct Classifier {
    labels: Vec<String>,
    space: SpikeSpace,
    nodes: Vec<Partition>,
    counts: Vec<u64>,
}

impl Classifier {
    pub fn new<S: AsRef<str>>(core: &mut Core, labels: &[S], space: SpikeSpace) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("classifier needs at least one label".into()));
        }
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Domain(format!("duplicate label `{l}`")));
            }
        }
        let mut nodes = Vec::with_capacity(labels.len());
        for _ in &labels {
            match core.allocate(space.size()) {
                Ok(p) => nodes.push(p),
                Err(e) => {
                    for p in &nodes {
                        core.free(p)?;
                    }
                    return Err(e);
                }
            }
        }
        let counts = vec![0; labels.len()];
        Ok(Self {
            labels,
            space,
            nodes,
            counts,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn space(&self) -> SpikeSpace {
        self.space
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.nodes
    }

    /// Training examples seen per label, in label order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn partition_for(&self, label: &str) -> Option<&Partition> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| &self.nodes[i])
    }

    /// `FF;RF` on every node, ranked by confidence.
    pub fn classify(&self, core: &mut Core, x: &SpikePattern) -> Result<Vec<Scored>> {
        check_pattern(x, self.space)?;
        let mut scored = Vec::with_capacity(self.nodes.len());
        for (label, p) in self.labels.iter().zip(&self.nodes) {
            let read = core.execute(p, x, Instruction::FF)?;
            core.execute(p, x, Instruction::RF)?;
            scored.push(Scored {
                label: label.clone(),
                confidence: read.v_y,
            });
        }
        Ok(rank(scored))
    }

    /// Supervised update. Returns the pre-update forward reads, ranked.
    pub fn train_step(&mut self, core: &mut Core, x: &SpikePattern, label: &str) -> Result<Vec<Scored>> {
        check_pattern(x, self.space)?;
        let truth = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))?;
        let mut scored = Vec::with_capacity(self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let read = core.execute(p, x, Instruction::FF)?;
            let feedback = if i == truth {
                Instruction::RH
            } else {
                Instruction::RL
            };
            core.execute(p, x, feedback)?;
            scored.push(Scored {
                label: self.labels[i].clone(),
                confidence: read.v_y,
            });
        }
        self.counts[truth] += 1;
        Ok(rank(scored))
    }

    /// Rebind to existing partitions, e.g. after restoring a snapshot.
    pub fn from_parts(
        core: &Core,
        labels: Vec<String>,
        space: SpikeSpace,
        partitions: &[u32],
        counts: Vec<u64>,
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != partitions.len() || labels.len() != counts.len() {
            return Err(Error::Domain(
                "labels, partitions and counts must be non-empty and of equal length".into(),
            ));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Domain(format!("duplicate label `{l}`")));
            }
        }
        let nodes = live_partitions(core, partitions, space.size())?;
        Ok(Self {
            labels,
            space,
            nodes,
            counts,
        })
    }

    /// `key=value` manifest tying labels to partition ids, stored next to a
    /// core snapshot. Labels are written in order as `label=<id>:<name>`.
    pub fn manifest(&self) -> String {
        let mut out = format!("space={}\n", self.space.size());
        for ((label, p), n) in self.labels.iter().zip(&self.nodes).zip(&self.counts) {
            out.push_str(&format!("label={}:{}:{}\n", p.id, n, label));
        }
        out
    }

    /// Rebind a classifier to the partitions of a restored core.
    pub fn from_manifest(core: &Core, text: &str) -> Result<Self> {
        let mut space = None;
        let mut labels = Vec::new();
        let mut nodes = Vec::new();
        let mut counts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::Parse { line, reason };
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, found `{raw}`")))?;
            match key.trim() {
                "space" => {
                    let n: usize = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("bad spike space `{value}`")))?;
                    space = Some(SpikeSpace::new(n)?);
                }
                "label" => {
                    let mut parts = value.splitn(3, ':');
                    let (Some(id), Some(n), Some(name)) = (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(bad("expected label=<id>:<count>:<name>".into()));
                    };
                    let id: u32 = id.parse().map_err(|_| bad(format!("bad partition id `{id}`")))?;
                    let n: u64 = n.parse().map_err(|_| bad(format!("bad count `{n}`")))?;
                    let p = core
                        .partition(id)
                        .ok_or_else(|| bad(format!("partition {id} is not live in the core")))?;
                    if labels.iter().any(|l| l == name) {
                        return Err(bad(format!("duplicate label `{name}`")));
                    }
                    labels.push(name.to_owned());
                    nodes.push(p);
                    counts.push(n);
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let space = space.ok_or(Error::Parse {
            line: 0,
            reason: "manifest lacks `space`".into(),
        })?;
        if labels.is_empty() {
            return Err(Error::Domain("manifest names no labels".into()));
        }
        let ids: Vec<u32> = nodes.iter().map(|p| p.id).collect();
        Self::from_parts(core, labels, space, &ids, counts)
    }

    pub fn release(self, core: &mut Core) -> Result<()> {
        for p in &self.nodes {
            core.free(p)?;
        }
        Ok(())
    }
}

/// Competitive clusterer: one node per feature, winner takes the
/// unsupervised update.
///
/// Each node carries one extra always-active bias synapse at index
/// `space.size()`. After every step the winner's bias is pushed down and the
/// losers' biases up, which stops a single node from capturing every input.
#[derive(Debug, Clone)]
pub struct Clusterer {
    space: SpikeSpace,
    nodes: Vec<Partition>,
    bias: SpikePattern,
    widened: SpikeSpace,
}

impl Clusterer {
    pub fn new(core: &mut Core, features: usize, space: SpikeSpace) -> Result<Self> {
        if features == 0 {
            return Err(Error::Domain("clusterer needs at least one feature".into()));
        }
        let width = space.size() + 1;
        let mut nodes = Vec::with_capacity(features);
        for _ in 0..features {
            match core.allocate(width) {
                Ok(p) => nodes.push(p),
                Err(e) => {
                    for p in &nodes {
                        core.free(p)?;
                    }
                    return Err(e);
                }
            }
        }
        let widened = SpikeSpace::new(width)?;
        let bias = SpikePattern::new(vec![space.size()], widened)?;
        Ok(Self {
            space,
            nodes,
            bias,
            widened,
        })
    }

    /// Rebind to existing partitions of `space.size() + 1` synapses.
    pub fn from_parts(core: &Core, space: SpikeSpace, partitions: &[u32]) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::Domain("clusterer needs at least one feature".into()));
        }
        let nodes = live_partitions(core, partitions, space.size() + 1)?;
        let widened = SpikeSpace::new(space.size() + 1)?;
        let bias = SpikePattern::new(vec![space.size()], widened)?;
        Ok(Self {
            space,
            nodes,
            bias,
            widened,
        })
    }

    pub fn features(&self) -> usize {
        self.nodes.len()
    }

    pub fn space(&self) -> SpikeSpace {
        self.space
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.nodes
    }

    fn with_bias(&self, x: &SpikePattern) -> SpikePattern {
        let mut ids = x.ids().to_vec();
        ids.push(self.space.size());
        SpikePattern::from_unsorted(ids, self.widened)
            .expect("pattern already validated")
    }

    /// Assign `x` to the feature with the highest forward read (lowest index
    /// on ties) and adapt: `RU` on the winner, `RF` elsewhere.
    pub fn cluster_step(&self, core: &mut Core, x: &SpikePattern) -> Result<usize> {
        check_pattern(x, self.space)?;
        let xb = self.with_bias(x);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, p) in self.nodes.iter().enumerate() {
            let y = core.execute(p, &xb, Instruction::FF)?.v_y;
            if y > best.1 {
                best = (i, y);
            }
        }
        let winner = best.0;
        for (i, p) in self.nodes.iter().enumerate() {
            let (update, bias) = if i == winner {
                (Instruction::RU, Instruction::RL)
            } else {
                (Instruction::RF, Instruction::RH)
            };
            core.execute(p, &xb, update)?;
            core.execute(p, &self.bias, Instruction::FF)?;
            core.execute(p, &self.bias, bias)?;
        }
        Ok(winner)
    }

    pub fn release(self, core: &mut Core) -> Result<()> {
        for p in &self.nodes {
            core.free(p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::SimMode;
    use crate::node;
    use crate::ram::CoreConfig;

    fn core() -> Core {
        Core::new(CoreConfig {
            log2_capacity: 10,
            ..CoreConfig::default()
        })
        .unwrap()
    }

    fn space(n: usize) -> SpikeSpace {
        SpikeSpace::new(n).unwrap()
    }

    fn pat(ids: &[usize], n: usize) -> SpikePattern {
        SpikePattern::new(ids.to_vec(), space(n)).unwrap()
    }

    #[test]
    fn fresh_classifier_is_undecided() {
        let mut c = core();
        let clf = Classifier::new(&mut c, &["a", "b"], space(16)).unwrap();
        let out = clf.classify(&mut c, &pat(&[0, 6], 16)).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.confidence == 0.0));
        // Ties keep label order.
        assert_eq!(out[0].label, "a");
    }

    #[test]
    fn trained_label_ranks_first() {
        let mut c = core();
        let mut clf = Classifier::new(&mut c, &["a", "b"], space(16)).unwrap();
        let x = pat(&[0, 6], 16);
        for _ in 0..10 {
            clf.train_step(&mut c, &x, "b").unwrap();
        }
        let out = clf.classify(&mut c, &x).unwrap();
        assert_eq!(out[0].label, "b");
        assert!(out[0].confidence > 0.0 && out[1].confidence < 0.0);
    }

    #[test]
    fn first_training_step_is_mirrored() {
        let mut c = core();
        let mut clf = Classifier::new(&mut c, &["a", "b"], space(16)).unwrap();
        let x = pat(&[2, 3, 9], 16);
        clf.train_step(&mut c, &x, "a").unwrap();
        let pa = *clf.partition_for("a").unwrap();
        let pb = *clf.partition_for("b").unwrap();
        let wa = c.probe(&pa, &x).unwrap();
        let wb = c.probe(&pb, &x).unwrap();
        assert!(wa > 0.0);
        assert!((wa + wb).abs() < 1e-12, "{wa} {wb}");
    }

    #[test]
    fn inactive_weights_untouched() {
        let mut c = core();
        let mut clf = Classifier::new(&mut c, &["a", "b", "c"], space(16)).unwrap();
        let x = pat(&[1, 4], 16);
        for label in ["a", "c", "b", "a"] {
            clf.train_step(&mut c, &x, label).unwrap();
        }
        let params = *c.params();
        for p in clf.partitions() {
            let syn = c.partition_synapses(p).unwrap();
            for (i, s) in syn.iter().enumerate() {
                if !x.contains(i) {
                    assert_eq!(node::weight(&params, s), 0.0);
                }
            }
        }
    }

    #[test]
    fn contradictory_labels_stay_bounded() {
        let mut c = Core::new(CoreConfig {
            log2_capacity: 8,
            mode: SimMode::Stochastic,
            seed: 4,
            ..CoreConfig::default()
        })
        .unwrap();
        let mut clf = Classifier::new(&mut c, &["a", "b"], space(8)).unwrap();
        let x = pat(&[0, 3, 5], 8);
        let params = *c.params();
        let v = c.drive().v_drive;
        for i in 0..10_000 {
            let out = clf
                .train_step(&mut c, &x, if i % 2 == 0 { "a" } else { "b" })
                .unwrap();
            assert!(out.iter().all(|s| s.confidence.abs() <= v));
            for s in c.synapses() {
                for d in [s.a, s.b] {
                    let f = d.on_fraction(&params);
                    assert!(f > 0.01 && f < 0.99, "step {i}: on-fraction {f}");
                }
            }
        }
        assert_eq!(clf.counts(), &[5_000, 5_000]);
    }

    #[test]
    fn classifier_errors() {
        let mut c = core();
        assert!(Classifier::new(&mut c, &[] as &[&str], space(4)).is_err());
        assert!(Classifier::new(&mut c, &["a", "a"], space(4)).is_err());
        let mut clf = Classifier::new(&mut c, &["a"], space(4)).unwrap();
        assert!(matches!(
            clf.train_step(&mut c, &pat(&[0], 4), "z"),
            Err(Error::UnknownLabel(_))
        ));
        assert!(clf.classify(&mut c, &SpikePattern::empty()).is_err());
        assert!(clf.classify(&mut c, &pat(&[7], 8)).is_err());
        // Failed calls leave the pairing state usable.
        clf.train_step(&mut c, &pat(&[0], 4), "a").unwrap();
    }

    #[test]
    fn allocation_failure_rolls_back() {
        let mut c = Core::new(CoreConfig {
            log2_capacity: 5,
            ..CoreConfig::default()
        })
        .unwrap();
        assert!(Classifier::new(&mut c, &["a", "b", "c"], space(16)).is_err());
        assert_eq!(c.allocated(), 0);
        assert!(Clusterer::new(&mut c, 2, space(16)).is_err());
        assert_eq!(c.allocated(), 0);
    }

    #[test]
    fn manifest_round_trip() {
        let mut c = core();
        let _other = c.allocate(5).unwrap();
        let mut clf = Classifier::new(&mut c, &["cat", "dog:x"], space(8)).unwrap();
        clf.train_step(&mut c, &pat(&[1, 2], 8), "dog:x").unwrap();
        let text = clf.manifest();
        let image = c.snapshot();
        let mut restored = Core::restore(&image).unwrap();
        let mut back = Classifier::from_manifest(&restored, &text).unwrap();
        assert_eq!(back.labels(), clf.labels());
        assert_eq!(back.partitions(), clf.partitions());
        assert_eq!(back.counts(), &[0, 1]);
        let x = pat(&[1, 2, 5], 8);
        assert_eq!(
            back.classify(&mut restored, &x).unwrap(),
            clf.classify(&mut c, &x).unwrap()
        );
        back.train_step(&mut restored, &x, "cat").unwrap();

        assert!(Classifier::from_manifest(&restored, "label=0:0:a\n").is_err());
        match Classifier::from_manifest(&restored, "space=8\nlabel=99:0:a\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        // Partition 0 has 5 synapses, not 8.
        assert!(Classifier::from_manifest(&restored, "space=8\nlabel=0:0:a\n").is_err());
    }

    #[test]
    fn ranking_is_scale_free() {
        let mut c = core();
        let mut clf = Classifier::new(&mut c, &["a", "b", "c"], space(8)).unwrap();
        for (ids, l) in [(&[0, 1][..], "a"), (&[2, 3][..], "b"), (&[4, 5][..], "c")] {
            for _ in 0..5 {
                clf.train_step(&mut c, &pat(ids, 8), l).unwrap();
            }
        }
        let out = clf.classify(&mut c, &pat(&[1, 2, 3], 8)).unwrap();
        let v = c.drive().v_drive;
        let mut scaled = out.clone();
        for s in &mut scaled {
            s.confidence /= v;
        }
        let order = |r: &[Scored]| r.iter().map(|s| s.label.clone()).collect::<Vec<_>>();
        assert_eq!(order(&rank(scaled)), order(&out));
        assert_eq!(out[0].label, "b");
    }

    #[test]
    fn clusterer_rebinds_after_restore() {
        let mut c = core();
        let clu = Clusterer::new(&mut c, 2, space(8)).unwrap();
        for i in 0..20 {
            clu.cluster_step(&mut c, &pat(&[i % 4, 4 + i % 4], 8)).unwrap();
        }
        let ids: Vec<u32> = clu.partitions().iter().map(|p| p.id).collect();
        let mut restored = Core::restore(&c.snapshot()).unwrap();
        let back = Clusterer::from_parts(&restored, space(8), &ids).unwrap();
        for i in 0..10 {
            let x = pat(&[i % 8], 8);
            assert_eq!(
                back.cluster_step(&mut restored, &x).unwrap(),
                clu.cluster_step(&mut c, &x).unwrap()
            );
        }
        assert!(Clusterer::from_parts(&restored, space(9), &ids).is_err());
        assert!(Clusterer::from_parts(&restored, space(8), &[42]).is_err());
    }

    #[test]
    fn first_cluster_call_picks_feature_zero() {
        let mut c = core();
        let clu = Clusterer::new(&mut c, 3, space(16)).unwrap();
        assert_eq!(clu.cluster_step(&mut c, &pat(&[0, 6], 16)).unwrap(), 0);
    }

    #[test]
    fn single_feature_always_wins() {
        let mut c = core();
        let clu = Clusterer::new(&mut c, 1, space(8)).unwrap();
        for i in 0..50 {
            let x = SpikePattern::from_unsorted(vec![i % 8, (i + 3) % 8], space(8)).unwrap();
            assert_eq!(clu.cluster_step(&mut c, &x).unwrap(), 0);
        }
    }

    #[test]
    fn winner_is_argmax_of_forward_reads() {
        let mut c = core();
        let clu = Clusterer::new(&mut c, 3, space(8)).unwrap();
        for (k, p) in clu.partitions().iter().enumerate() {
            c.seed_partition(p, k as u64, 0.3).unwrap();
        }
        let patterns = [pat(&[0, 1], 8), pat(&[2, 5, 7], 8), pat(&[3], 8), pat(&[4, 6], 8)];
        for x in patterns.iter().cycle().take(40) {
            let xb = clu.with_bias(x);
            let reads: Vec<f64> = clu
                .partitions()
                .iter()
                .map(|p| c.probe(p, &xb).unwrap())
                .collect();
            let mut expected = 0;
            for (i, &y) in reads.iter().enumerate() {
                if y > reads[expected] {
                    expected = i;
                }
            }
            assert_eq!(clu.cluster_step(&mut c, x).unwrap(), expected);
        }
    }
}
