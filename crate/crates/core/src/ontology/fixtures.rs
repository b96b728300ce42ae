use super::{Ontology, OntologyError};
use crate::dataset::DatasetKind;

const FIXTURES: &[(DatasetKind, usize, &str)] = &[
    (DatasetKind::Us8k, 2, include_str!("../../fixtures/ontologies/us8k_p2.json")),
    (DatasetKind::Us8k, 3, include_str!("../../fixtures/ontologies/us8k_p3.json")),
    (DatasetKind::Us8k, 5, include_str!("../../fixtures/ontologies/us8k_p5.json")),
    (DatasetKind::Esc10, 2, include_str!("../../fixtures/ontologies/esc10_p2.json")),
    (DatasetKind::Esc10, 3, include_str!("../../fixtures/ontologies/esc10_p3.json")),
    (DatasetKind::Esc10, 5, include_str!("../../fixtures/ontologies/esc10_p5.json")),
    (DatasetKind::Esc50, 3, include_str!("../../fixtures/ontologies/esc50_p3.json")),
    (DatasetKind::Esc50, 5, include_str!("../../fixtures/ontologies/esc50_p5.json")),
    (DatasetKind::Esc50, 7, include_str!("../../fixtures/ontologies/esc50_p7.json")),
    (DatasetKind::Synthetic, 2, include_str!("../../fixtures/ontologies/synthetic_p2.json")),
    (DatasetKind::Synthetic, 3, include_str!("../../fixtures/ontologies/synthetic_p3.json")),
];

/// Frozen ontology for `(kind, p)`; no network access.
pub fn fixture_ontology(kind: DatasetKind, p: usize) -> Result<Ontology, OntologyError> {
    FIXTURES
        .iter()
        .find(|(k, fp, _)| *k == kind && *fp == p)
        .map(|(_, _, text)| Ontology::from_json(text).expect("shipped fixture parses"))
        .ok_or_else(|| OntologyError::FixtureNotFound {
            dataset: kind.to_string(),
            p,
        })
}

/// Every shipped fixture with its dataset kind.
pub fn all_fixtures() -> Vec<(DatasetKind, Ontology)> {
    FIXTURES
        .iter()
        .map(|(k, _, text)| (*k, Ontology::from_json(text).expect("shipped fixture parses")))
        .collect()
}
