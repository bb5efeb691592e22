//! Shared setup for the criterion benches.

use d2qmm_core::fixture::{DemoFixture, FixtureConfig};
use d2qmm_core::pipeline::{filter_corpus, index_expanded, RetrievalSettings};
use d2qmm_core::{lexical_scorer, mock_generator, FilterConfig, InvertedIndex};

/// Fixture expanded at retained proportion `p` and indexed.
pub fn fixture_index(docs: usize, p: f64) -> (DemoFixture, InvertedIndex) {
    let fixture = DemoFixture::generate(FixtureConfig {
        docs,
        ..FixtureConfig::default()
    });
    let settings = RetrievalSettings::default();
    let generator = mock_generator(fixture.mock.clone()).expect("fixture mock config is valid");
    let scorer = lexical_scorer(&fixture.corpus, &settings.tokenizer, settings.params)
        .expect("fixture corpus indexes");
    let config = FilterConfig::proportion(p, fixture.config.n).expect("p in range");
    let filtered = filter_corpus(&fixture.corpus, &generator, &scorer, &config)
        .expect("fixture filtering succeeds");
    let index = index_expanded(&filtered.expanded, &settings).expect("fixture indexes");
    (fixture, index)
}
