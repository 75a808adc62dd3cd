use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent_protocol::PromptTemplate;
use crate::rollout::Trajectory;

/// Approximate token counts for text.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(bytes / bytes_per_token)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteEstimator {
    pub bytes_per_token: usize,
}

impl Default for ByteEstimator {
    fn default() -> Self {
        Self { bytes_per_token: 4 }
    }
}

impl TokenEstimator for ByteEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(self.bytes_per_token.max(1))
    }
}

impl<F: Fn(&str) -> usize + Send + Sync> TokenEstimator for F {
    fn estimate(&self, text: &str) -> usize {
        self(text)
    }
}

/// Tokens of every prompt and reply in the trajectory, each estimated
/// separately and summed.
pub fn trajectory_tokens(traj: &Trajectory, template: &PromptTemplate, estimator: &dyn TokenEstimator) -> usize {
    (0..traj.turns.len())
        .map(|i| estimator.estimate(&traj.turn_prompt(template, i)) + estimator.estimate(&traj.turns[i].raw_model_text))
        .sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Nearest-rank 95th percentile.
    pub p95: u64,
    pub max: u64,
}

impl Summary {
    pub fn of(values: &[u64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let n = v.len();
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
        };
        let rank = (95 * n).div_ceil(100).max(1);
        Self {
            count: n,
            mean,
            median,
            p95: v[rank - 1],
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub bin_width: u64,
    /// Bin start to count, contiguous from the lowest to the highest
    /// occupied bin.
    pub bins: BTreeMap<u64, usize>,
    pub summary: Summary,
}

impl Distribution {
    pub fn of(values: &[u64], bin_width: u64) -> Self {
        let bin_width = bin_width.max(1);
        let mut bins = BTreeMap::new();
        if let (Some(lo), Some(hi)) = (values.iter().min(), values.iter().max()) {
            let mut b = lo / bin_width * bin_width;
            while b <= *hi {
                bins.insert(b, 0);
                b += bin_width;
            }
        }
        for v in values {
            *bins.entry(v / bin_width * bin_width).or_insert(0) += 1;
        }
        Self {
            bin_width,
            bins,
            summary: Summary::of(values),
        }
    }

    pub fn total(&self) -> usize {
        self.bins.values().sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_start\tcount\n");
        for (start, count) in &self.bins {
            let _ = writeln!(out, "{start}\t{count}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub turn_bin_width: u64,
    pub token_bin_width: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            turn_bin_width: 1,
            token_bin_width: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub turns: Distribution,
    pub tokens: Distribution,
}

impl CorpusStats {
    /// Both histograms as tab-separated tables under `# turns` and
    /// `# tokens` headings, followed by their summaries.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, d) in [("turns", &self.turns), ("tokens", &self.tokens)] {
            let s = &d.summary;
            let _ = writeln!(out, "# {name}");
            out.push_str(&d.to_tsv());
            let _ = writeln!(
                out,
                "# count={} mean={:.3} median={:.1} p95={} max={}\n",
                s.count, s.mean, s.median, s.p95, s.max
            );
        }
        out
    }
}

pub fn corpus_stats(
    trajs: &[Trajectory],
    template: &PromptTemplate,
    estimator: &dyn TokenEstimator,
    config: &StatsConfig,
) -> CorpusStats {
    let turns: Vec<u64> = trajs.iter().map(|t| t.turns.len() as u64).collect();
    let tokens: Vec<u64> = trajs
        .iter()
        .map(|t| trajectory_tokens(t, template, estimator) as u64)
        .collect();
    CorpusStats {
        turns: Distribution::of(&turns, config.turn_bin_width),
        tokens: Distribution::of(&tokens, config.token_bin_width),
    }
}
