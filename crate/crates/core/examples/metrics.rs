//! Score molecules with an external command and compute set metrics.

use std::collections::HashSet;

use sketchmol::pipeline::{base_library, metrics, score_filter, CommandScorer, MetricsParams};

fn main() {
    let library = base_library();
    let generated: Vec<_> = library.iter().cycle().take(12).cloned().collect();
    // stand-in docking tool: one score per record, more negative for larger molecules
    let mut scorer = CommandScorer::new("awk '/V2000/{n=substr($0,1,3)+0} /^\\$\\$\\$\\$/{print -n/2}'");
    let filtered = score_filter(&generated, &mut scorer, -5.0).unwrap();
    println!("{} kept, {} unscored", filtered.kept.len(), filtered.unscored);
    let train: HashSet<String> = library.iter().take(5).map(|m| m.canonical_key()).collect();
    let params = MetricsParams { success_threshold: Some(-5.0), ..MetricsParams::default() };
    let report = metrics(&generated, &filtered.scores, &train, &params).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
