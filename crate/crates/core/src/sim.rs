//! Simulated distributed inference: layers live on nodes, nodes fail per
//! inference and take their layers with them, and the survivors run in
//! arrival order or plan order.

use std::fmt::{self, Write as _};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::{argmax, VisionTransformer};
use crate::rng::{streams, SeedRng};
use crate::train::shuffle_layers;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignStrategy {
    RoundRobin,
    Contiguous,
}

impl AssignStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "roundrobin" => Some(AssignStrategy::RoundRobin),
            "contiguous" => Some(AssignStrategy::Contiguous),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderPolicy {
    /// Survivors run in a fresh uniformly random order.
    ArrivalRandom,
    /// Survivors run in increasing layer id.
    PlanSequential,
}

impl OrderPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arrival-random" => Some(OrderPolicy::ArrivalRandom),
            "plan-sequential" => Some(OrderPolicy::PlanSequential),
            _ => None,
        }
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderPolicy::ArrivalRandom => "arrival-random",
            OrderPolicy::PlanSequential => "plan-sequential",
        })
    }
}

/// Layer-to-node assignment; layers and nodes are zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePlan {
    nodes: usize,
    assignment: Vec<usize>,
}

impl NodePlan {
    pub fn new(nodes: usize, assignment: Vec<usize>) -> Result<Self> {
        if nodes == 0 || assignment.iter().any(|&n| n >= nodes) {
            return Err(Error::InvalidArgument(format!(
                "assignment {assignment:?} invalid for {nodes} nodes"
            )));
        }
        Ok(NodePlan { nodes, assignment })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn layers(&self) -> usize {
        self.assignment.len()
    }

    pub fn node_of(&self, layer: usize) -> usize {
        self.assignment[layer]
    }

    pub fn layers_on(&self, node: usize) -> Vec<usize> {
        (0..self.layers()).filter(|&l| self.assignment[l] == node).collect()
    }

    /// Layers whose node is not in `failed`, increasing.
    pub fn surviving_layers(&self, failed: &[usize]) -> Vec<usize> {
        (0..self.layers())
            .filter(|&l| !failed.contains(&self.assignment[l]))
            .collect()
    }
}

pub fn assign_layers(layers: usize, nodes: usize, strategy: AssignStrategy) -> Result<NodePlan> {
    if nodes == 0 || nodes > layers {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= nodes <= layers, got {nodes} nodes for {layers} layers"
        )));
    }
    let assignment = match strategy {
        AssignStrategy::RoundRobin => (0..layers).map(|l| l % nodes).collect(),
        AssignStrategy::Contiguous => {
            let (base, extra) = (layers / nodes, layers % nodes);
            (0..nodes)
                .flat_map(|n| std::iter::repeat_n(n, base + usize::from(n < extra)))
                .collect()
        }
    };
    NodePlan::new(nodes, assignment)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub fail_prob: f64,
    pub policy: OrderPolicy,
    pub trials: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fail_prob) {
            return Err(Error::InvalidConfig(format!(
                "fail probability {} outside [0, 1)",
                self.fail_prob
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Independent failure draw for each node, increasing node ids.
pub fn draw_failures(rng: &mut SeedRng, nodes: usize, fail_prob: f64) -> Vec<usize> {
    (0..nodes).filter(|_| rng.bernoulli(fail_prob)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialRecord {
    pub image: usize,
    pub failed_nodes: Vec<usize>,
    /// Layers in the order they ran.
    pub executed: Vec<usize>,
    pub prediction: usize,
    pub correct: bool,
}

/// Runs one image with the layers of `failed` nodes removed. When every node
/// has failed the head reads the embedded input directly. Returns the
/// predicted class and the executed layer order.
pub fn run_inference(
    model: &VisionTransformer,
    image: &[f32],
    plan: &NodePlan,
    failed: &[usize],
    policy: OrderPolicy,
    rng: &mut SeedRng,
) -> Result<(usize, Vec<usize>)> {
    if plan.layers() != model.layers() {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} layers, model has {}",
            plan.layers(),
            model.layers()
        )));
    }
    let survivors = plan.surviving_layers(failed);
    let order = match policy {
        OrderPolicy::ArrivalRandom => shuffle_layers(rng, &survivors),
        OrderPolicy::PlanSequential => survivors,
    };
    let logits = model.logits(&[image], &order)?;
    Ok((argmax(logits.row(0)), order))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimBucket {
    pub missing_layers: usize,
    pub trials: usize,
    pub correct: usize,
}

impl SimBucket {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.trials as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    /// Non-empty buckets by increasing number of missing layers.
    pub buckets: Vec<SimBucket>,
    pub trace: Vec<TrialRecord>,
}

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("missing_layers,trials,accuracy\n");
        for b in &self.buckets {
            writeln!(out, "{},{},{}", b.missing_layers, b.trials, b.accuracy()).unwrap();
        }
        out
    }

    pub fn overall_accuracy(&self) -> f64 {
        let correct: usize = self.buckets.iter().map(|b| b.correct).sum();
        correct as f64 / self.trace.len() as f64
    }
}

/// Trial `t` classifies image `t mod len`. Failures come from the `FAILURE`
/// stream and arrival orders from the `ORDER` stream, so with
/// `fail_prob = 0` and `trials = len` the result matches
/// [`crate::eval::evaluate`] with one repeat under the same seed.
pub fn simulate(
    model: &VisionTransformer,
    split: &Split,
    plan: &NodePlan,
    cfg: &SimConfig,
) -> Result<SimReport> {
    cfg.validate()?;
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut fail_rng = SeedRng::stream(cfg.seed, streams::FAILURE);
    let mut order_rng = SeedRng::stream(cfg.seed, streams::ORDER);
    let layers = plan.layers();
    let mut buckets: Vec<SimBucket> = (0..=layers)
        .map(|missing_layers| SimBucket {
            missing_layers,
            trials: 0,
            correct: 0,
        })
        .collect();
    let mut trace = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let image = t % split.len();
        let failed_nodes = draw_failures(&mut fail_rng, plan.nodes(), cfg.fail_prob);
        let (prediction, executed) = run_inference(
            model,
            split.image(image),
            plan,
            &failed_nodes,
            cfg.policy,
            &mut order_rng,
        )?;
        let correct = prediction == split.labels[image];
        let bucket = &mut buckets[layers - executed.len()];
        bucket.trials += 1;
        bucket.correct += usize::from(correct);
        trace.push(TrialRecord {
            image,
            failed_nodes,
            executed,
            prediction,
            correct,
        });
    }
    buckets.retain(|b| b.trials > 0);
    Ok(SimReport { buckets, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_one_layer_per_node() {
        let plan = assign_layers(6, 6, AssignStrategy::RoundRobin).unwrap();
        for n in 0..6 {
            assert_eq!(plan.layers_on(n), vec![n]);
        }
    }

    #[test]
    fn round_robin_wraps() {
        let plan = assign_layers(6, 4, AssignStrategy::RoundRobin).unwrap();
        assert_eq!(plan.layers_on(0), vec![0, 4]);
        assert_eq!(plan.layers_on(3), vec![3]);
    }

    #[test]
    fn contiguous_halves() {
        let plan = assign_layers(6, 2, AssignStrategy::Contiguous).unwrap();
        assert_eq!(plan.layers_on(0), vec![0, 1, 2]);
        assert_eq!(plan.layers_on(1), vec![3, 4, 5]);
    }

    #[test]
    fn contiguous_remainder_goes_first() {
        let plan = assign_layers(6, 4, AssignStrategy::Contiguous).unwrap();
        let sizes: Vec<usize> = (0..4).map(|n| plan.layers_on(n).len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1]);
    }

    #[test]
    fn rejects_bad_node_counts() {
        assert!(assign_layers(6, 0, AssignStrategy::Contiguous).is_err());
        assert!(assign_layers(6, 7, AssignStrategy::RoundRobin).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig {
            fail_prob: 0.0,
            policy: OrderPolicy::ArrivalRandom,
            trials: 1,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(SimConfig { fail_prob: 1.0, ..ok }.validate().is_err());
        assert!(SimConfig { trials: 0, ..ok }.validate().is_err());
    }
}
