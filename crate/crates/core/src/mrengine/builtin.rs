//! The five built-in relations over the TC01-TC08 test cases.

use super::{Clause, MRSpec, Predicate, Thresholds};

/// Record name of the model trained on the unmodified dataset.
pub const BASELINE: &str = "baseline";

fn s(v: &str) -> String {
    v.to_string()
}

fn drop_within(follow_up: &str) -> Predicate {
    Predicate::clause(Clause::IsDropWithin {
        baseline: s(BASELINE),
        follow_up: s(follow_up),
    })
}

fn tint_not_elevated(follow_up: &str) -> Predicate {
    Predicate::clause(Clause::TintNotElevated {
        baseline: s(BASELINE),
        follow_up: s(follow_up),
    })
}

fn tint_elevated(follow_up: &str) -> Predicate {
    Predicate::clause(Clause::TintElevated {
        baseline: s(BASELINE),
        follow_up: s(follow_up),
    })
}

fn drops_similar(a: &str, b: &str) -> Predicate {
    Predicate::clause(Clause::DropsSimilar {
        baseline: s(BASELINE),
        a: s(a),
        b: s(b),
    })
}

/// Partial mutation beats full mutation on IS and is less tinted.
fn partial_beats_full(label: &str, partial: &str, full: &str) -> Predicate {
    Predicate::all(
        label,
        vec![
            Predicate::clause(Clause::IsHigher {
                higher: s(partial),
                lower: s(full),
            }),
            Predicate::clause(Clause::TintLower {
                lower: s(partial),
                higher: s(full),
            }),
        ],
    )
}

/// MR01 against an arbitrary follow-up record: IS within `epsilon_is` of the
/// baseline and no tint increase beyond `tau_tint`.
pub fn mr01_for(id: &str, follow_up: &str) -> MRSpec {
    MRSpec {
        id: s(id),
        description: format!(
            "A minimally obtrusive object inserted into every training image ({follow_up}) keeps the \
             Inception Score within epsilon_is of the baseline and adds no grey tint beyond tau_tint."
        ),
        predicate: Predicate::All {
            label: None,
            of: vec![
                Predicate::all("is", vec![drop_within(follow_up)]),
                Predicate::all("tint", vec![tint_not_elevated(follow_up)]),
            ],
        },
        parameters: Thresholds::default(),
        derived_from: vec![],
    }
}

/// MR01..MR05 with default thresholds.
pub fn builtin_mrs() -> Vec<MRSpec> {
    let t = Thresholds::default();
    vec![
        mr01_for("MR01", "TC01"),
        MRSpec {
            id: s("MR02"),
            description: s(
                "Full-set insertion tints the output grey and moves the Inception Score by a similar \
                 relative amount whether the object is a bird (TC01) or a tree (TC02).",
            ),
            predicate: Predicate::All {
                label: None,
                of: vec![
                    Predicate::all("tint", vec![tint_elevated("TC01"), tint_elevated("TC02")]),
                    Predicate::all("is-similarity", vec![drops_similar("TC01", "TC02")]),
                ],
            },
            parameters: t,
            derived_from: vec![s("MR01")],
        },
        MRSpec {
            id: s("MR03"),
            description: s(
                "Mutating only 30% of the training images yields a higher Inception Score and less \
                 grey tint than mutating all of them, for birds (TC03 vs TC01) and trees (TC04 vs TC02).",
            ),
            predicate: Predicate::All {
                label: None,
                of: vec![
                    partial_beats_full("birds", "TC03", "TC01"),
                    partial_beats_full("trees", "TC04", "TC02"),
                ],
            },
            parameters: t,
            derived_from: vec![s("MR01")],
        },
        MRSpec {
            id: s("MR04"),
            description: s(
                "Full-set insertion of a single bird tints the output grey and moves the Inception \
                 Score by a similar relative amount regardless of its colour (green TC05, blue TC06, \
                 red TC07).",
            ),
            predicate: Predicate::All {
                label: None,
                of: vec![
                    Predicate::all(
                        "tint",
                        vec![tint_elevated("TC05"), tint_elevated("TC06"), tint_elevated("TC07")],
                    ),
                    Predicate::all(
                        "is-similarity",
                        vec![
                            drops_similar("TC05", "TC06"),
                            drops_similar("TC05", "TC07"),
                            drops_similar("TC06", "TC07"),
                        ],
                    ),
                ],
            },
            parameters: t,
            derived_from: vec![s("MR02"), s("MR03")],
        },
        MRSpec {
            id: s("MR05"),
            description: s(
                "An object inserted into every training image without overlapping the focal box \
                 (TC08) adds no grey tint beyond tau_tint and keeps the Inception Score within \
                 epsilon_is of the baseline.",
            ),
            predicate: Predicate::All {
                label: None,
                of: vec![
                    Predicate::all("is", vec![drop_within("TC08")]),
                    Predicate::all("tint", vec![tint_not_elevated("TC08")]),
                ],
            },
            parameters: t,
            derived_from: vec![s("MR02"), s("MR03"), s("MR04")],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_relations_with_causal_links() {
        let mrs = builtin_mrs();
        let ids: Vec<&str> = mrs.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["MR01", "MR02", "MR03", "MR04", "MR05"]);
        assert!(mrs[0].derived_from.is_empty());
        assert_eq!(mrs[1].derived_from, ["MR01"]);
        assert_eq!(mrs[2].derived_from, ["MR01"]);
        assert_eq!(mrs[3].derived_from, ["MR02", "MR03"]);
        assert_eq!(mrs[4].derived_from, ["MR02", "MR03", "MR04"]);
    }

    #[test]
    fn references() {
        let mrs = builtin_mrs();
        let refs: Vec<String> = mrs[2].predicate.references().into_iter().collect();
        assert_eq!(refs, ["TC01", "TC02", "TC03", "TC04"]);
        assert!(mrs[4].predicate.references().contains(BASELINE));
    }
}
