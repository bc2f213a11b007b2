//! Deterministic rule-based agents. They stand in for the remote
//! backends in tests and offline benchmark runs: same inputs, same
//! outputs, no network.

use crate::schema::{
    serialize_decomposition, Decomposition, EditRequest, ImageRef, TermSet,
};

use super::{AgentError, Decomposer, DecompositionOutcome, Editor, Sequencer, SubRequestPlan};

/// Phrase lexicon mapping instruction verbs to canonical action names.
/// Rules are checked in order; every rule whose phrase occurs (on word
/// boundaries) contributes its action once.
const ACTION_RULES: &[(&[&str], &str)] = &[
    (&["change the color", "recolor", "recoloring"], "Recoloring"),
    (&["remove", "delete", "erase"], "Removal"),
    (&["add", "insert"], "Addition"),
    (&["enlarge", "grow"], "Enlargement"),
    (&["sharpen"], "Sharpening"),
    (&["blur", "soften"], "Blurring"),
    (&["brighten", "lighten"], "Brightening"),
    (&["darken", "dim"], "Darkening"),
];

/// Nouns the decomposer recognizes as edit subjects.
const SUBJECT_NOUNS: &[&str] = &[
    "coat", "hair", "sky", "cat", "dog", "car", "tree", "wall", "background", "person", "hat",
    "scarf",
];

const FALLBACK_ACTION: &str = "Adjustment";

/// True when `needle` occurs in `haystack` with non-alphanumeric (or
/// edge) characters on both sides.
fn contains_word(haystack: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let left_ok = start == 0
            || !haystack[..start]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric());
        let right_ok = end == haystack.len()
            || !haystack[end..].chars().next().is_some_and(|c| c.is_alphanumeric());
        if left_ok && right_ok {
            return Some(start);
        }
        from = end;
    }
    None
}

/// Splits an instruction into the part naming subjects and the goal
/// phrase: text after ", aiming for " when present, otherwise after the
/// last " to ". Instructions with neither marker have no goal.
fn split_goal(instruction: &str) -> (&str, Option<&str>) {
    if let Some(at) = instruction.find(", aiming for ") {
        let goal = &instruction[at + ", aiming for ".len()..];
        return (&instruction[..at], Some(goal));
    }
    if let Some(at) = instruction.rfind(" to ") {
        return (&instruction[..at], Some(&instruction[at + " to ".len()..]));
    }
    (instruction, None)
}

/// Decomposes instructions with a fixed phrase lexicon: actions from
/// [`ACTION_RULES`], subjects from [`SUBJECT_NOUNS`] in order of
/// appearance, and a single goal phrase per [`split_goal`].
#[derive(Clone, Debug, Default)]
pub struct MockDecomposer {
    fixed: Option<Decomposition>,
}

impl MockDecomposer {
    pub fn new() -> Self {
        Self::default()
    }

    /// A decomposer that ignores its input and answers `d` verbatim.
    pub fn fixed(d: Decomposition) -> Self {
        MockDecomposer { fixed: Some(d) }
    }

    fn decompose_rules(instruction: &str) -> Result<Decomposition, AgentError> {
        let lowered = instruction.to_lowercase();
        let (subject_part, goal_part) = split_goal(&lowered);

        let mut actions = TermSet::empty();
        for (phrases, action) in ACTION_RULES {
            if phrases.iter().any(|p| contains_word(&lowered, p).is_some()) {
                actions.insert((*action).to_string());
            }
        }
        if actions.is_empty() {
            actions.insert(FALLBACK_ACTION.to_string());
        }

        // subjects sorted by where they first appear, not lexicon order
        let mut found: Vec<(usize, &str)> = SUBJECT_NOUNS
            .iter()
            .filter_map(|noun| contains_word(subject_part, noun).map(|at| (at, *noun)))
            .collect();
        found.sort_unstable();
        let subjects = TermSet::new(found.into_iter().map(|(_, noun)| noun));

        let mut goals = TermSet::empty();
        if let Some(goal) = goal_part {
            let goal = goal.trim().trim_end_matches(['.', '!', '?']).trim();
            if !goal.is_empty() {
                goals.insert(goal.to_string());
            }
        }

        Ok(Decomposition::new(actions, subjects, goals, None)?)
    }
}

impl Decomposer for MockDecomposer {
    fn decompose(&self, request: &EditRequest) -> Result<DecompositionOutcome, AgentError> {
        request.validate()?;
        let decomposition = match &self.fixed {
            Some(d) => d.clone(),
            None => Self::decompose_rules(&request.instruction)?,
        };
        let raw_output = serialize_decomposition(&decomposition)?;
        Ok(DecompositionOutcome {
            decomposition,
            raw_output,
            attempts: 1,
        })
    }
}

/// Plans edits as the cross product of actions and subjects, in set
/// order, pairing flat pair `i` with goal `i` (the last goal repeats
/// when goals run short). Goal terms containing " or " contribute one
/// goal per alternative.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockSequencer;

impl MockSequencer {
    pub fn new() -> Self {
        MockSequencer
    }
}

impl Sequencer for MockSequencer {
    fn sequence(
        &self,
        _image: &ImageRef,
        decomposition: &Decomposition,
    ) -> Result<SubRequestPlan, AgentError> {
        let fallback_actions = [FALLBACK_ACTION.to_string()];
        let fallback_subjects = ["the image".to_string()];
        let actions: &[String] = match decomposition.actions.as_slice() {
            [] => &fallback_actions,
            some => some,
        };
        let subjects: &[String] = match decomposition.subjects.as_slice() {
            [] => &fallback_subjects,
            some => some,
        };
        let mut goals: Vec<&str> = decomposition
            .goals
            .iter()
            .flat_map(|g| g.split(" or "))
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .collect();
        if goals.is_empty() {
            goals.push("the requested look");
        }

        let mut items = Vec::with_capacity(actions.len() * subjects.len());
        for action in actions {
            for subject in subjects {
                let goal = goals[items.len().min(goals.len() - 1)];
                items.push(format!("{action} {subject} to {goal}"));
            }
        }
        SubRequestPlan::new(items)
    }
}

const EDITS_MARK: &str = "#edits=";

fn escape_step(step: &str) -> String {
    step.replace('%', "%25").replace('|', "%7C").replace('#', "%23")
}

fn unescape_step(step: &str) -> String {
    step.replace("%23", "#").replace("%7C", "|").replace("%25", "%")
}

/// "Edits" images by appending the instruction to a provenance log kept
/// in the output URI's fragment, so tests can assert exactly which edits
/// ran and in what order.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockEditor;

impl MockEditor {
    pub fn new() -> Self {
        MockEditor
    }
}

impl Editor for MockEditor {
    fn edit(&self, image: &ImageRef, instruction: &str) -> Result<ImageRef, AgentError> {
        if instruction.trim().is_empty() {
            return Err(AgentError::BlankSubRequest { index: 0 });
        }
        let (base, mut steps) = match image {
            ImageRef::Uri(uri) => match uri.split_once(EDITS_MARK) {
                Some((base, log)) => (
                    base.to_string(),
                    log.split('|').map(unescape_step).collect(),
                ),
                None => (uri.clone(), Vec::new()),
            },
            ImageRef::Inline(img) => (
                format!("mock:{};len={}", img.media_type, img.bytes.len()),
                Vec::new(),
            ),
        };
        steps.push(instruction.to_string());
        let log = steps
            .iter()
            .map(|s| escape_step(s))
            .collect::<Vec<_>>()
            .join("|");
        Ok(ImageRef::uri(format!("{base}{EDITS_MARK}{log}"))?)
    }
}

/// Reads back the edit log a [`MockEditor`] chain left on an image.
/// Images that never passed through the mock editor have an empty log.
pub fn provenance(image: &ImageRef) -> Vec<String> {
    match image {
        ImageRef::Uri(uri) => uri
            .split_once(EDITS_MARK)
            .map(|(_, log)| log.split('|').map(unescape_step).collect())
            .unwrap_or_default(),
        ImageRef::Inline(_) => Vec::new(),
    }
}
