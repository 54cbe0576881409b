// SPDX-License-Identifier: Apache-2.0

//! Caption a candidate set with the oracle captioner and keep the captions
//! that use one of the corpus's most frequent content words.
//!
//! ```bash
//! cargo run --example caption_filter
//! ```

use biasamp::caption::{build_corpus, OracleCaptioner};
use biasamp::dataset::{synth_generate, Split, SynthShapesSpec};
use biasamp::extract::ConflictCandidateSet;
use biasamp::filter::{filter_corpus, FilterSpec};

fn main() -> biasamp::Result<()> {
    let dir = std::env::temp_dir().join("biasamp-caption-filter");
    let manifest = synth_generate(&SynthShapesSpec::new(4, 0.1, 200, 20, 11), &dir)?;

    // Any id list works as a candidate set; here the first 24 train samples.
    let ids: Vec<String> = manifest.split(Split::Train).take(24).map(|s| s.id.clone()).collect();
    let candidates = ConflictCandidateSet {
        losses: vec![0.0; ids.len()],
        k: ids.len(),
        sample_ids: ids,
        source_model: "example".into(),
    };
    let corpus = build_corpus(&candidates, &manifest, &OracleCaptioner, 3, 0, 4)?;
    println!("{} captions from {} samples", corpus.records.len(), candidates.len());
    for r in corpus.records.iter().take(6) {
        println!("  {}#{}: {}", r.sample_id, r.caption_index, r.text);
    }

    let mut spec = FilterSpec::new(manifest.num_classes());
    spec.class_vocab = Some(manifest.class_names.iter().cloned().collect());
    let filtered = filter_corpus(&corpus, &spec)?;
    println!("F = {}: {:?}", spec.resolved_f()?, filtered.top_f_words);
    println!("class words in top-F: {:?}", filtered.class_words_in_top_f);
    println!("kept {}, dropped {} {:?}", filtered.kept.len(), filtered.dropped.len(), filtered.drop_reasons());
    for (r, _) in filtered.dropped.iter().take(3) {
        println!("  dropped: {}", r.text);
    }
    Ok(())
}
