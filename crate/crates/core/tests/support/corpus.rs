//! Synthetic corpora shared by the learning tests.

use changegraph::data::{generate_synthetic, LabeledRecord, SynthConfig};

/// A record whose R wave is flanked by dips as deep as the R wave is tall.
/// The two-state graph cannot label it: any gap large enough to ignore the
/// dips also rejects the down-then-up swing the dips create around R.
pub fn dip_record(n_cycles: usize, seed: u64) -> LabeledRecord {
    generate_synthetic(&SynthConfig {
        record_id: format!("dip{seed}"),
        n_cycles,
        noise_sigma: 0.2,
        pre_r_dip: 10.0,
        post_r_dip: 10.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Twenty 60-cycle records with noise 0.2 and baseline wander of 0.3 of the
/// R amplitude; every fourth record (five in all) carries pre-R dips.
pub fn cv_corpus() -> Vec<LabeledRecord> {
    (0..20)
        .map(|i| {
            generate_synthetic(&SynthConfig {
                record_id: format!("syn{i:02}"),
                n_cycles: 60,
                noise_sigma: 0.2,
                baseline_wander_amp: 3.0,
                pre_r_dip: if i % 4 == 0 { 3.0 } else { 0.0 },
                seed: 1000 + i as u64,
                ..SynthConfig::default()
            })
            .unwrap()
        })
        .collect()
}
