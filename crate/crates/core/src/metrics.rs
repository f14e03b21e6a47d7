//! Pixel-level segmentation metrics: global accuracy (glo), mean per-class
//! accuracy (ave) and mean IoU, for actors, actions and joint pairs.

use serde::{Deserialize, Serialize};

use crate::config::parse_bool;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Count the background class in mIoU.
    pub iou_background: bool,
    /// Count the background class in ave.
    pub ave_background: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            iou_background: false,
            ave_background: true,
        }
    }
}

impl MetricOptions {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iou_background" => self.iou_background = parse_bool(key, value)?,
            "ave_background" => self.ave_background = parse_bool(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("iou_background".into(), self.iou_background.to_string()),
            ("ave_background".into(), self.ave_background.to_string()),
        ]
    }

    /// Human-readable statement of the counting protocol.
    pub fn protocol(&self) -> Vec<String> {
        let bg = |on: bool| if on { "includes" } else { "excludes" };
        vec![
            "glo = correct pixels / all pixels".into(),
            format!(
                "ave = mean per-class accuracy over classes present in ground truth; {} background",
                bg(self.ave_background)
            ),
            format!(
                "mIoU = mean IoU over classes present in prediction or ground truth; {} background",
                bg(self.iou_background)
            ),
            "classes absent from both prediction and ground truth are skipped".into(),
            "joint labels are (actor, action) pairs; background = both background; invalid predicted pairs are errors".into(),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Actor,
    Action,
    Joint,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Actor => "actor",
            Task::Action => "action",
            Task::Joint => "joint",
        }
    }
}

/// Integer counts from which every metric is derived. Predictions equal to
/// `num_classes` mark invalid labels: they are wrong everywhere and belong
/// to no scored class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counts {
    pub num_classes: usize,
    pub total: u64,
    pub correct: u64,
    pub invalid: u64,
    pub gt: Vec<u64>,
    pub pred: Vec<u64>,
    pub hit: Vec<u64>,
}

impl Counts {
    pub fn new(num_classes: usize) -> Self {
        Counts {
            num_classes,
            total: 0,
            correct: 0,
            invalid: 0,
            gt: vec![0; num_classes],
            pred: vec![0; num_classes],
            hit: vec![0; num_classes],
        }
    }

    fn check(label: i32, n: usize, what: &str, allow_invalid: bool) -> Result<usize> {
        let limit = if allow_invalid { n + 1 } else { n };
        if label < 0 || label as usize >= limit {
            return Err(Error::Data(format!("{what} label {label} outside 0..{n}")));
        }
        Ok(label as usize)
    }

    pub fn add(&mut self, pred: &[i32], gt: &[i32]) -> Result<()> {
        self.add_inner(pred, gt, false)
    }

    fn add_inner(&mut self, pred: &[i32], gt: &[i32], allow_invalid: bool) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let n = self.num_classes;
        for (&p, &g) in pred.iter().zip(gt) {
            let p = Self::check(p, n, "predicted", allow_invalid)?;
            let g = Self::check(g, n, "ground-truth", false)?;
            self.total += 1;
            self.gt[g] += 1;
            if p == n {
                self.invalid += 1;
                continue;
            }
            self.pred[p] += 1;
            if p == g {
                self.correct += 1;
                self.hit[g] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self, task: Task, opts: &MetricOptions) -> TaskMetrics {
        let n = self.num_classes;
        let accuracy: Vec<Option<f64>> = (0..n)
            .map(|c| (self.gt[c] > 0).then(|| self.hit[c] as f64 / self.gt[c] as f64))
            .collect();
        let iou: Vec<Option<f64>> = (0..n)
            .map(|c| {
                let union = self.gt[c] + self.pred[c] - self.hit[c];
                (union > 0).then(|| self.hit[c] as f64 / union as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>], skip_bg: bool| -> f64 {
            let xs: Vec<f64> = v
                .iter()
                .enumerate()
                .filter(|&(c, _)| !(skip_bg && c == 0))
                .filter_map(|(_, x)| *x)
                .collect();
            if xs.is_empty() {
                1.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        TaskMetrics {
            task,
            glo: if self.total == 0 {
                1.0
            } else {
                self.correct as f64 / self.total as f64
            },
            ave: mean(&accuracy, !opts.ave_background),
            miou: mean(&iou, !opts.iou_background),
            class_accuracy: accuracy,
            class_iou: iou,
            pixels: self.total,
            correct: self.correct,
            invalid: self.invalid,
            gt_counts: self.gt.clone(),
            pred_counts: self.pred.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub glo: f64,
    pub ave: f64,
    pub miou: f64,
    /// `None` for classes absent from ground truth.
    pub class_accuracy: Vec<Option<f64>>,
    /// `None` for classes absent from both prediction and ground truth.
    pub class_iou: Vec<Option<f64>>,
    pub pixels: u64,
    pub correct: u64,
    pub invalid: u64,
    pub gt_counts: Vec<u64>,
    pub pred_counts: Vec<u64>,
}

/// Scores one label volume against another.
pub fn evaluate(pred: &[i32], gt: &[i32], num_classes: usize, task: Task, opts: &MetricOptions) -> Result<TaskMetrics> {
    let mut c = Counts::new(num_classes);
    c.add(pred, gt)?;
    Ok(c.finish(task, opts))
}

/// Maps `(actor, action)` pairs to joint labels: 0 for background, `i + 1`
/// for `pairs[i]`, and `pairs.len() + 1` for anything else.
#[derive(Clone, Debug)]
pub struct PairSpace {
    pairs: Vec<(i32, i32)>,
}

impl PairSpace {
    pub fn new(pairs: &[(i32, i32)]) -> Self {
        PairSpace { pairs: pairs.to_vec() }
    }

    /// Scored classes, background included.
    pub fn classes(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn pairs(&self) -> &[(i32, i32)] {
        &self.pairs
    }

    pub fn label(&self, actor: i32, action: i32) -> i32 {
        if actor == 0 && action == 0 {
            return 0;
        }
        match self.pairs.iter().position(|&p| p == (actor, action)) {
            Some(i) => i as i32 + 1,
            None => self.classes() as i32,
        }
    }

    pub fn labels(&self, actor: &[i32], action: &[i32]) -> Vec<i32> {
        actor.iter().zip(action).map(|(&a, &b)| self.label(a, b)).collect()
    }
}

/// Accumulates actor, action and joint counts over many clips.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub actor: Counts,
    pub action: Counts,
    pub joint: Counts,
    space: PairSpace,
    clips: usize,
}

impl Evaluator {
    pub fn new(actor_classes: usize, action_classes: usize, pairs: &[(i32, i32)]) -> Self {
        let space = PairSpace::new(pairs);
        Evaluator {
            actor: Counts::new(actor_classes),
            action: Counts::new(action_classes),
            joint: Counts::new(space.classes()),
            space,
            clips: 0,
        }
    }

    pub fn add(&mut self, pred_actor: &[i32], pred_action: &[i32], gt_actor: &[i32], gt_action: &[i32]) -> Result<()> {
        self.actor.add(pred_actor, gt_actor)?;
        self.action.add(pred_action, gt_action)?;
        let gt = self.space.labels(gt_actor, gt_action);
        if gt.iter().any(|&g| g as usize == self.space.classes()) {
            return Err(Error::Data("ground truth contains an invalid actor-action pair".into()));
        }
        self.joint
            .add_inner(&self.space.labels(pred_actor, pred_action), &gt, true)?;
        self.clips += 1;
        Ok(())
    }

    pub fn report(&self, opts: &MetricOptions) -> MetricReport {
        MetricReport {
            protocol: opts.protocol(),
            clips: self.clips,
            pairs: self.space.pairs().to_vec(),
            actor: self.actor.finish(Task::Actor, opts),
            action: self.action.finish(Task::Action, opts),
            joint: self.joint.finish(Task::Joint, opts),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Vec<String>,
    pub clips: usize,
    /// Joint class `i + 1` is `pairs[i]`.
    pub pairs: Vec<(i32, i32)>,
    pub actor: TaskMetrics,
    pub action: TaskMetrics,
    pub joint: TaskMetrics,
}

fn fmt_opt(v: &[Option<f64>]) -> String {
    v.iter()
        .map(|x| x.map_or_else(|| "-".to_string(), |x| format!("{x:.6}")))
        .collect::<Vec<_>>()
        .join(",")
}

impl MetricReport {
    pub fn tasks(&self) -> [&TaskMetrics; 3] {
        [&self.actor, &self.action, &self.joint]
    }

    /// `key=value` lines preceded by `#` protocol comments.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for line in &self.protocol {
            out.push_str(&format!("# protocol: {line}\n"));
        }
        out.push_str(&format!("clips={}\n", self.clips));
        for t in self.tasks() {
            let k = t.task.name();
            out.push_str(&format!("{k}.glo={:.6}\n", t.glo));
            out.push_str(&format!("{k}.ave={:.6}\n", t.ave));
            out.push_str(&format!("{k}.miou={:.6}\n", t.miou));
            out.push_str(&format!("{k}.pixels={}\n", t.pixels));
            out.push_str(&format!("{k}.correct={}\n", t.correct));
            out.push_str(&format!("{k}.invalid={}\n", t.invalid));
            out.push_str(&format!("{k}.class_accuracy={}\n", fmt_opt(&t.class_accuracy)));
            out.push_str(&format!("{k}.class_iou={}\n", fmt_opt(&t.class_iou)));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Three-column summary in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8}{:>8}{:>8}{:>8}\n", "task", "glo", "ave", "mIoU");
        for t in self.tasks() {
            out.push_str(&format!(
                "{:<8}{:>8.1}{:>8.1}{:>8.1}\n",
                t.task.name(),
                100.0 * t.glo,
                100.0 * t.ave,
                100.0 * t.miou
            ));
        }
        out
    }
}
