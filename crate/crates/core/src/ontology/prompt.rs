use super::{OntologyError, Violation};
use crate::fsutil::sha256_hex;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub n: usize,
    pub p: usize,
    pub label_list_hash: String,
}

/// Renders the label-grouping template for `labels` and `p`, followed by
/// an instruction to answer with a JSON object.
pub fn build_prompt(labels: &[String], p: usize) -> Result<PromptText, OntologyError> {
    let n = labels.len();
    if n == 0 || p < 2 || p >= n {
        return Err(OntologyError::InvalidParentCount { p, n });
    }
    let mut text = String::from("Dataset Classes:\n");
    for l in labels {
        text.push_str("- ");
        text.push_str(l);
        text.push('\n');
    }
    text.push_str(&format!(
        "Number of Classes in Dataset = {n}\n\
         Number of Parent Classes to Generate = {p}\n\
         The task is to create {p} parent classes by identifying and leveraging the similarities across the {n} classes in the dataset.\n"
    ));
    text.push_str(&format!(
        "\nOutput format: reply with one JSON object and nothing else. Use exactly {p} keys, one per parent class \
         name; each value is the list of dataset classes in that parent, spelled exactly as listed above. \
         Every dataset class must appear under exactly one parent.\n"
    ));
    Ok(PromptText {
        text,
        n,
        p,
        label_list_hash: sha256_hex(labels.join("\n").as_bytes()),
    })
}

impl PromptText {
    /// Copy with the previous attempt's problems appended.
    pub fn with_feedback(&self, violations: &[Violation], reason: &str) -> PromptText {
        let mut text = self.text.clone();
        text.push_str("\nYour previous answer was rejected");
        if violations.is_empty() {
            text.push_str(&format!(": {reason}\n"));
        } else {
            text.push_str(" for these reasons:\n");
            for v in violations {
                text.push_str(&format!("- {v}\n"));
            }
        }
        text.push_str("Answer again following the output format.\n");
        PromptText { text, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetKind;

    #[test]
    fn template_lines_are_exact() {
        let labels = DatasetKind::Us8k.labels();
        let p = build_prompt(&labels, 2).unwrap();
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(lines[0], "Dataset Classes:");
        assert_eq!(lines[1], "- air_conditioner");
        assert_eq!(lines[10], "- street_music");
        assert_eq!(lines[11], "Number of Classes in Dataset = 10");
        assert_eq!(lines[12], "Number of Parent Classes to Generate = 2");
        assert_eq!(
            lines[13],
            "The task is to create 2 parent classes by identifying and leveraging the similarities across the 10 classes in the dataset."
        );
        assert!(p.text.contains("JSON"));
    }

    #[test]
    fn bounds_are_enforced() {
        let labels = DatasetKind::Esc10.labels();
        assert!(matches!(build_prompt(&labels, 10), Err(OntologyError::InvalidParentCount { p: 10, n: 10 })));
        assert!(build_prompt(&labels, 1).is_err());
        assert!(build_prompt(&[], 2).is_err());
    }
}
