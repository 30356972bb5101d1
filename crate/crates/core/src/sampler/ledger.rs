use serde::{Deserialize, Serialize};

/// Proposal/acceptance counts of one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub proposals: u64,
    pub accepted: u64,
    pub window_proposals: u64,
    pub window_accepted: u64,
    /// Proposals rejected because the log posterior was not finite.
    pub nonfinite: u64,
    pub jump_sd: f64,
}

impl BlockStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepted as f64 / self.proposals as f64)
    }

    pub fn window_rate(&self) -> Option<f64> {
        (self.window_proposals > 0).then(|| self.window_accepted as f64 / self.window_proposals as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    Sampling,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::BurnIn => "burn_in",
            Phase::Sampling => "sampling",
        }
    }
}

/// A closed acceptance window of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub block: usize,
    pub end_iteration: usize,
    pub phase: Phase,
    pub proposals: u64,
    pub accepted: u64,
    /// Jump SD in force while the window ran.
    pub jump_sd: f64,
}

impl WindowRecord {
    pub fn rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepted as f64 / self.proposals as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLedger {
    pub blocks: Vec<BlockStats>,
    pub history: Vec<WindowRecord>,
}

impl AcceptanceLedger {
    pub fn new(blocks: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            blocks: blocks
                .into_iter()
                .map(|(name, jump_sd)| BlockStats {
                    name,
                    proposals: 0,
                    accepted: 0,
                    window_proposals: 0,
                    window_accepted: 0,
                    nonfinite: 0,
                    jump_sd,
                })
                .collect(),
            history: Vec::new(),
        }
    }

    #[inline]
    pub fn record(&mut self, block: usize, accepted: bool) {
        let b = &mut self.blocks[block];
        b.proposals += 1;
        b.window_proposals += 1;
        if accepted {
            b.accepted += 1;
            b.window_accepted += 1;
        }
    }

    pub fn record_nonfinite(&mut self, block: usize) {
        self.record(block, false);
        self.blocks[block].nonfinite += 1;
    }

    /// Archives the open window of every block and starts a new one. Blocks
    /// without proposals in the window are not archived.
    pub fn close_window(&mut self, end_iteration: usize, phase: Phase) {
        for (idx, b) in self.blocks.iter_mut().enumerate() {
            if b.window_proposals > 0 {
                self.history.push(WindowRecord {
                    block: idx,
                    end_iteration,
                    phase,
                    proposals: b.window_proposals,
                    accepted: b.window_accepted,
                    jump_sd: b.jump_sd,
                });
            }
            b.window_proposals = 0;
            b.window_accepted = 0;
        }
    }

    pub fn windows(&self, phase: Phase) -> impl Iterator<Item = &WindowRecord> {
        self.history.iter().filter(move |w| w.phase == phase)
    }

    /// Acceptance rate per block over the sampling phase only.
    pub fn sampling_rates(&self) -> Vec<(String, Option<f64>)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(idx, b)| {
                let (mut prop, mut acc) = (0u64, 0u64);
                for w in self.windows(Phase::Sampling).filter(|w| w.block == idx) {
                    prop += w.proposals;
                    acc += w.accepted;
                }
                (b.name.clone(), (prop > 0).then(|| acc as f64 / prop as f64))
            })
            .collect()
    }
}

/// Multiplicative jump-size rule applied once per window during burn-in.
pub fn adapt_jump(sd: f64, window_rate: Option<f64>, lo: f64, hi: f64) -> f64 {
    match window_rate {
        Some(r) if r > hi => sd * 1.25,
        Some(r) if r < lo => sd * 0.8,
        _ => sd,
    }
}

/// Applies [`adapt_jump`] to every block using its current window.
pub fn adapt_proposals(ledger: &mut AcceptanceLedger, lo: f64, hi: f64) {
    for b in &mut ledger.blocks {
        b.jump_sd = adapt_jump(b.jump_sd, b.window_rate(), lo, hi);
    }
}
