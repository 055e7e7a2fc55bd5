//! Synthetic workloads and end-to-end experiments.

mod experiments;
mod planted;
pub mod rng;

pub use experiments::{
    compound_ca_table, decode_sample, replay_last_step, run_cost_validation, run_equivalence, run_recovery,
    BudgetEquivalence, CompoundCaGrid, CompoundCaRow, CompoundCaTable, CostPoint, CostReport, EquivalenceReport,
    ExperimentReport, HeadRecovery, RecoveryReport, SampleDecode,
};
pub use planted::{merge_corpus, synth_planted, PlantedSpec, PlantedTruth};
