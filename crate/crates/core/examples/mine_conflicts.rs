// SPDX-License-Identifier: Apache-2.0

//! Train a GCE-biased classifier and mine the highest-loss train samples,
//! which should be mostly bias-conflicting.
//!
//! ```bash
//! cargo run --release --example mine_conflicts
//! ```

use biasamp::dataset::{synth_generate, Group, SynthShapesSpec};
use biasamp::extract::{extract_topk, extraction_purity, rank};
use biasamp::gce::{model_hash, per_sample_losses, train, ClassifierConfig, LossMode, ModelRole};

fn main() -> biasamp::Result<()> {
    let dir = std::env::temp_dir().join("biasamp-mine-conflicts");
    let manifest = synth_generate(&SynthShapesSpec::new(4, 0.02, 800, 80, 3), &dir)?;
    let comp = manifest.composition();
    println!("train: {} aligned, {} conflict", comp.train_aligned, comp.train_conflict);

    let mut cfg = ClassifierConfig::desk_scale(LossMode::Gce);
    cfg.input_size = 16;
    cfg.epochs = 4;
    let model = train(&manifest, &cfg, ModelRole::Biased)?;
    for e in &model.history {
        println!("epoch {} loss {:.4} acc {:.3}", e.epoch, e.mean_loss, e.train_acc);
    }

    let scores = per_sample_losses(&model, &manifest, LossMode::Ce, cfg.q)?;
    let ranking = rank(&scores.entries)?;
    let k = comp.train_conflict;
    let candidates = extract_topk(&ranking, k, &model_hash(&model))?;
    let purity = extraction_purity(&candidates, &manifest)?.unwrap_or(0.0);
    println!("top-{k} purity {purity:.3}");
    for (id, loss) in ranking.entries().iter().take(8) {
        let s = manifest.get(id).expect("ranked id");
        let mark = if s.group == Group::Conflict { "conflict" } else { "aligned" };
        println!("  {id} loss {loss:.3} {mark} ({} {})", s.bias_attr.as_deref().unwrap_or("?"), manifest.class_names[s.label]);
    }
    Ok(())
}
