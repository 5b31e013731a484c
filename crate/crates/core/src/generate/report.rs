use std::fmt::Write as _;

use super::GenerationResult;
use crate::data::AttributeSchema;

/// `iteration,<value_column>,step_size` rows, one per trace entry.
pub fn trace_csv(result: &GenerationResult, value_column: &str) -> String {
    let mut out = format!("iteration,{value_column},step_size\n");
    for (i, (v, s)) in result.trace.iter().zip(&result.step_sizes).enumerate() {
        let _ = writeln!(out, "{i},{v:e},{s:e}");
    }
    out
}

/// Plain-text run report: a title, the configuration echo, a trace summary
/// and, when present, the classifier's per-group probabilities.
pub fn report_text(title: &str, config_echo: &str, result: &GenerationResult, schema: &AttributeSchema) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out);
    let _ = writeln!(out, "[config]");
    out.push_str(config_echo);
    let _ = writeln!(out);
    let _ = writeln!(out, "[optimization]");
    let _ = writeln!(out, "iterations = {}", result.iterations);
    if let (Some(first), Some(last)) = (result.trace.first(), result.trace.last()) {
        let _ = writeln!(out, "initial = {first:e}");
        let _ = writeln!(out, "final = {last:e}");
    }
    if let Some(c) = &result.classification {
        let _ = writeln!(out);
        let _ = writeln!(out, "[classification]");
        for (g, (group, probs)) in schema.groups().iter().zip(&c.probs).enumerate() {
            let cells: Vec<String> = group
                .labels
                .iter()
                .zip(probs)
                .map(|(l, p)| format!("{l}={p:.4}"))
                .collect();
            let _ = writeln!(
                out,
                "{} = {} ({})",
                group.name,
                group.labels[c.predictions[g]],
                cells.join(" ")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::Classification;
    use crate::tensor::Tensor;

    #[test]
    fn csv_and_report_layout() {
        let schema = AttributeSchema::from_spec(&[("mood", &["calm", "happy"])]).unwrap();
        let result = GenerationResult {
            image: Tensor::zeros(&[3, 1, 1]).unwrap(),
            trace: vec![2.0, 1.0],
            step_sizes: vec![0.0, 0.5],
            iterations: 1,
            classification: Some(Classification {
                probs: vec![vec![0.25, 0.7]],
                predictions: vec![1],
            }),
        };
        assert_eq!(
            trace_csv(&result, "data_term"),
            "iteration,data_term,step_size\n0,2e0,0e0\n1,1e0,5e-1\n"
        );
        let report = report_text("run", "seed = 1\n", &result, &schema);
        assert!(report.contains("seed = 1"));
        assert!(report.contains("mood = happy (calm=0.2500 happy=0.7000)"));
    }
}
