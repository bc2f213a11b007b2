//! Synthetic decomposition task for desk-scale training runs.
//!
//! Requests are templated over a closed vocabulary: a fixed-length prompt
//! `<req> action subj1 subj2 goal1 goal2 <ask>` (absent slots hold
//! `<na>`) whose gold decomposition is known by construction. The policy
//! must answer in the four-tag output format, one term per token, with
//! `,` between terms:
//!
//! ```text
//! <think> </think> <action> recolor </action>
//! <subjects> coat , hair </subjects> <goals> scarlet </goals> <eos>
//! ```
//!
//! Rendered trajectories (tokens joined by single spaces) are scored with
//! the ordinary decomposition reward. The starting policy is warmed so the
//! tag skeleton is mostly in place and section bodies draw roughly
//! uniformly from their term class; which terms to copy from the prompt is
//! what training has to learn.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{Decomposition, Tag, TermSet};

use super::policy::{TablePolicy, TokenId};

const ACTIONS: [&str; 5] = ["recolor", "remove", "add", "enlarge", "sharpen"];
const SUBJECTS: [&str; 6] = ["coat", "hair", "sky", "cat", "dog", "car"];
const GOALS: [&str; 14] = [
    "scarlet", "crimson", "azure", "emerald", "golden", "ivory", "matte", "glossy", "vivid",
    "soft", "pastel", "sepia", "neon", "muted",
];

/// Context window for the toy policy: wide enough that every generation
/// position still sees the whole prompt.
pub const TOY_WINDOW: usize = 16;

const SKELETON_BOOST: f64 = 10.0;
const CLASS_BOOST: f64 = 5.0;

/// The closed toy vocabulary, with the term classes at fixed id ranges.
#[derive(Clone, Debug)]
pub struct ToyVocab {
    tokens: Vec<String>,
}

impl ToyVocab {
    pub const REQ: TokenId = 0;
    pub const ASK: TokenId = 1;
    pub const COMMA: TokenId = 2;
    pub const NA: TokenId = 3;
    pub const EOS: TokenId = 4;
    const TAGS_AT: TokenId = 5;
    const ACTIONS_AT: TokenId = 13;
    const SUBJECTS_AT: TokenId = Self::ACTIONS_AT + ACTIONS.len() as TokenId;
    const GOALS_AT: TokenId = Self::SUBJECTS_AT + SUBJECTS.len() as TokenId;

    pub fn standard() -> Self {
        let mut tokens = vec![
            "<req>".to_string(),
            "<ask>".to_string(),
            ",".to_string(),
            "<na>".to_string(),
            "<eos>".to_string(),
        ];
        for tag in Tag::ALL {
            tokens.push(tag.open_token().to_string());
            tokens.push(tag.close_token().to_string());
        }
        tokens.extend(ACTIONS.iter().map(|s| s.to_string()));
        tokens.extend(SUBJECTS.iter().map(|s| s.to_string()));
        tokens.extend(GOALS.iter().map(|s| s.to_string()));
        ToyVocab { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn open(&self, tag: Tag) -> TokenId {
        let i = Tag::ALL.iter().position(|t| *t == tag).unwrap();
        Self::TAGS_AT + 2 * i as TokenId
    }

    pub fn close(&self, tag: Tag) -> TokenId {
        self.open(tag) + 1
    }

    pub fn actions(&self) -> std::ops::Range<TokenId> {
        Self::ACTIONS_AT..Self::SUBJECTS_AT
    }

    pub fn subjects(&self) -> std::ops::Range<TokenId> {
        Self::SUBJECTS_AT..Self::GOALS_AT
    }

    pub fn goals(&self) -> std::ops::Range<TokenId> {
        Self::GOALS_AT..self.tokens.len() as TokenId
    }

    /// A policy warmed toward the tag skeleton and class-uniform section
    /// bodies; also the natural reference policy for KL.
    pub fn warm_policy(&self) -> TablePolicy {
        let mut p = TablePolicy::new(self.len(), TOY_WINDOW);
        let skeleton = [
            (Self::ASK, self.open(Tag::Think)),
            (self.open(Tag::Think), self.close(Tag::Think)),
            (self.close(Tag::Think), self.open(Tag::Action)),
            (self.close(Tag::Action), self.open(Tag::Subjects)),
            (self.close(Tag::Subjects), self.open(Tag::Goals)),
            (self.close(Tag::Goals), Self::EOS),
        ];
        for (prev, next) in skeleton {
            p.bump(0, prev as usize, next as usize, SKELETON_BOOST);
        }
        for a in self.actions() {
            p.bump(0, self.open(Tag::Action) as usize, a as usize, CLASS_BOOST);
            p.bump(0, a as usize, self.close(Tag::Action) as usize, SKELETON_BOOST);
        }
        for s in self.subjects() {
            p.bump(0, self.open(Tag::Subjects) as usize, s as usize, CLASS_BOOST);
            p.bump(0, s as usize, Self::COMMA as usize, CLASS_BOOST);
            p.bump(0, s as usize, self.close(Tag::Subjects) as usize, CLASS_BOOST);
            // after "<subjects> s ," the open tag sits three tokens back;
            // keying the continuation class on it (rather than on the
            // comma itself) keeps goal terms out of subject lists
            p.bump(2, self.open(Tag::Subjects) as usize, s as usize, CLASS_BOOST);
        }
        for g in self.goals() {
            p.bump(0, self.open(Tag::Goals) as usize, g as usize, CLASS_BOOST);
            p.bump(0, g as usize, Self::COMMA as usize, CLASS_BOOST);
            p.bump(0, g as usize, self.close(Tag::Goals) as usize, CLASS_BOOST);
            p.bump(2, self.open(Tag::Goals) as usize, g as usize, CLASS_BOOST);
        }
        // lists never run past two terms: after "<tag> a , b" the open tag
        // sits five tokens back and the close token should follow
        for tag in [Tag::Subjects, Tag::Goals] {
            p.bump(4, self.open(tag) as usize, self.close(tag) as usize, CLASS_BOOST);
        }
        p
    }
}

/// One synthetic request: prompt tokens for the policy, a readable
/// instruction, and the gold decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyRequest {
    pub id: String,
    pub prompt_tokens: Vec<TokenId>,
    pub instruction: String,
    pub gold: Decomposition,
}

/// Joins token strings with single spaces; the inverse-direction parser
/// sees exactly this text.
pub fn render_tokens(vocab: &ToyVocab, tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|&t| vocab.token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministically generates `size` templated requests.
pub fn generate_corpus(vocab: &ToyVocab, size: usize, seed: u64) -> Vec<ToyRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions: Vec<TokenId> = vocab.actions().collect();
    let subjects: Vec<TokenId> = vocab.subjects().collect();
    let goals: Vec<TokenId> = vocab.goals().collect();
    (0..size)
        .map(|i| {
            let action = *actions.choose(&mut rng).unwrap();
            let n_subj = if rng.gen_bool(0.5) { 2 } else { 1 };
            let subj: Vec<TokenId> = subjects.choose_multiple(&mut rng, n_subj).copied().collect();
            let n_goal = if rng.gen_bool(0.4) { 2 } else { 1 };
            let goal: Vec<TokenId> = goals.choose_multiple(&mut rng, n_goal).copied().collect();

            let prompt_tokens = vec![
                ToyVocab::REQ,
                action,
                subj[0],
                subj.get(1).copied().unwrap_or(ToyVocab::NA),
                goal[0],
                goal.get(1).copied().unwrap_or(ToyVocab::NA),
                ToyVocab::ASK,
            ];
            let subj_text = match subj.as_slice() {
                [a] => format!("the {}", vocab.token(*a)),
                [a, b] => format!("the {} and the {}", vocab.token(*a), vocab.token(*b)),
                _ => unreachable!(),
            };
            let goal_text = match goal.as_slice() {
                [a] => vocab.token(*a).to_string(),
                [a, b] => format!("{} or {}", vocab.token(*a), vocab.token(*b)),
                _ => unreachable!(),
            };
            let instruction = format!(
                "Apply {} to {}, aiming for {}.",
                vocab.token(action),
                subj_text,
                goal_text
            );
            let gold = Decomposition::new(
                TermSet::new([vocab.token(action)]),
                subj.iter().map(|&s| vocab.token(s)).collect(),
                goal.iter().map(|&g| vocab.token(g)).collect(),
                None,
            )
            .expect("toy terms contain no tag tokens");
            ToyRequest {
                id: format!("toy-{i:05}"),
                prompt_tokens,
                instruction,
                gold,
            }
        })
        .collect()
}

/// The ideal output trajectory for a request, ending in `<eos>`.
pub fn gold_output_tokens(vocab: &ToyVocab, request: &ToyRequest) -> Vec<TokenId> {
    let p = &request.prompt_tokens;
    let mut out = vec![
        vocab.open(Tag::Think),
        vocab.close(Tag::Think),
        vocab.open(Tag::Action),
        p[1],
        vocab.close(Tag::Action),
        vocab.open(Tag::Subjects),
        p[2],
    ];
    if p[3] != ToyVocab::NA {
        out.push(ToyVocab::COMMA);
        out.push(p[3]);
    }
    out.push(vocab.close(Tag::Subjects));
    out.push(vocab.open(Tag::Goals));
    out.push(p[4]);
    if p[5] != ToyVocab::NA {
        out.push(ToyVocab::COMMA);
        out.push(p[5]);
    }
    out.push(vocab.close(Tag::Goals));
    out.push(ToyVocab::EOS);
    out
}
