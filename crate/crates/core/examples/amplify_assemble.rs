// SPDX-License-Identifier: Apache-2.0

//! Turn captions of bias-conflicting samples into new images and merge them
//! into a debiased training manifest.
//!
//! ```bash
//! cargo run --example amplify_assemble -- out/amplified
//! ```

use std::path::PathBuf;

use biasamp::caption::{build_corpus, OracleCaptioner};
use biasamp::dataset::{synth_generate, Group, Split, SynthShapesSpec};
use biasamp::extract::ConflictCandidateSet;
use biasamp::filter::{filter_corpus, FilterSpec};
use biasamp::generate::{amplify, assemble_debiased, write_generated, ClassVocab, GenerationTarget, OracleGenerator};

fn main() -> biasamp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/amplified".into()));
    let manifest = synth_generate(&SynthShapesSpec::new(4, 0.05, 400, 40, 5), &out.join("data"))?;

    let ids: Vec<String> = manifest
        .split(Split::Train)
        .filter(|s| s.group == Group::Conflict)
        .map(|s| s.id.clone())
        .collect();
    let candidates = ConflictCandidateSet {
        losses: vec![1.0; ids.len()],
        k: ids.len(),
        sample_ids: ids,
        source_model: "ground-truth".into(),
    };
    let corpus = build_corpus(&candidates, &manifest, &OracleCaptioner, 3, 0, 4)?;
    let filtered = filter_corpus(&corpus, &FilterSpec::new(manifest.num_classes()))?;

    let vocab = ClassVocab::from_class_names(&manifest.class_names);
    let target = GenerationTarget::Balance.resolve(&manifest);
    let gen_dir = out.join("generate");
    let set = amplify(&filtered, &OracleGenerator, &vocab, target, 32, 0, 4, &gen_dir)?;
    write_generated(&set, &gen_dir.join("generated.jsonl"))?;
    println!("generated {} images ({} captions had no class word)", set.samples.len(), set.skipped_no_label);
    for s in set.samples.iter().take(4) {
        println!("  {} label {}: {}", s.image.display(), s.label, s.prompt);
    }

    let assembled = out.join("assemble");
    std::fs::create_dir_all(&assembled).map_err(|e| biasamp::Error::io(&assembled, e))?;
    let debiased = assemble_debiased(&manifest, &set, &std::path::absolute(&assembled).expect("cwd"), Some(&candidates))?;
    debiased.manifest.write_manifest(&assembled.join("manifest.jsonl"))?;
    let c = &debiased.composition;
    println!(
        "debiased train: {} aligned, {} conflict, {} generated",
        c.train_aligned, c.train_conflict, c.train_unknown
    );
    Ok(())
}
