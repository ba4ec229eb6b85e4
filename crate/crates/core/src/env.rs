//! Scripted, persona-conditioned sales-dialogue simulator.
//!
//! The user is modelled as a stochastic intent machine. Each agent action
//! moves the user between attitudes according to a transition table loaded
//! from a TOML file (see `assets/environment.toml` for the key list), with a
//! handful of persona-dependent modulations:
//!
//! * `Filler` / `RepeatScript`: the Annoyed weight is multiplied by
//!   `annoy_base + skepticism`; the Leave weight by `busy_leave_factor` for busy users.
//! * `OfferDiscount`: the ReadyToBuy weight is multiplied by `discount_base + price_sensitivity`.
//! * `AskClose` while ReadyToBuy converts with probability
//!   `clamp(base_acceptance - discount_price_weight * price_sensitivity * discount_absent, 0, 1)`,
//!   otherwise the table row applies.
//! * `AskClose` while Annoyed ends the dialogue with probability
//!   `annoyed_close_termination`, otherwise the table row applies.
//!
//! Dialogues are force-terminated once `t_max` turns have been taken.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SimRng = ChaCha8Rng;

/// Value of a set last-action or attitude indicator. Sets how fast plain
/// gradient steps at the default learning rate move state-dependent logits,
/// while keeping the value-head regression stable.
pub const INDICATOR_GAIN: f64 = 4.0;

/// Length of [`DialogueState::history_features`].
pub const FEATURE_DIM: usize = 2 * ActionKind::COUNT + 4 + 1 + 4;

const SCHEMA_VERSION: u32 = 1;
const MAX_VOCABULARY: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a terminated dialogue")]
    StepAfterTerminal,
    #[error("invalid environment file: {0}")]
    Invalid(String),
    #[error("failed to read environment file {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    Neutral,
    Interested,
    Objecting,
    Annoyed,
    ReadyToBuy,
    Terminated,
}

impl Intent {
    /// Non-terminal attitudes in table-column order.
    pub const ATTITUDES: [Intent; 5] = [
        Intent::Neutral,
        Intent::Interested,
        Intent::Objecting,
        Intent::Annoyed,
        Intent::ReadyToBuy,
    ];

    fn attitude_index(self) -> Option<usize> {
        Self::ATTITUDES.iter().position(|&i| i == self)
    }

    /// Position on Annoyed < Objecting < Neutral < Interested < ReadyToBuy.
    pub fn rank(self) -> Option<u8> {
        match self {
            Intent::Annoyed => Some(0),
            Intent::Objecting => Some(1),
            Intent::Neutral => Some(2),
            Intent::Interested => Some(3),
            Intent::ReadyToBuy => Some(4),
            Intent::Terminated => None,
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ATTITUDES.into_iter().find(|i| format!("{i:?}") == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Greet,
    PitchFeature,
    AddressObjection,
    OfferDiscount,
    AskClose,
    RepeatScript,
    Filler,
    OverPromise,
}

impl ActionKind {
    pub const COUNT: usize = 8;
    pub const ALL: [ActionKind; Self::COUNT] = [
        ActionKind::Greet,
        ActionKind::PitchFeature,
        ActionKind::AddressObjection,
        ActionKind::OfferDiscount,
        ActionKind::AskClose,
        ActionKind::RepeatScript,
        ActionKind::Filler,
        ActionKind::OverPromise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Only over-promising breaks compliance.
    pub fn is_violation(self) -> bool {
        self == ActionKind::OverPromise
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| format!("{k:?}") == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub price_sensitivity: f64,
    pub skepticism: f64,
    pub busy: bool,
    pub base_acceptance: f64,
}

impl Persona {
    fn check(&self) -> Result<(), EnvError> {
        for (key, v) in [
            ("price_sensitivity", self.price_sensitivity),
            ("skepticism", self.skepticism),
            ("base_acceptance", self.base_acceptance),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EnvError::Invalid(format!(
                    "persona {}: {key} must lie in [0, 1], got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn features(&self) -> [f64; 4] {
        [
            self.price_sensitivity,
            self.skepticism,
            if self.busy { 1.0 } else { 0.0 },
            self.base_acceptance,
        ]
    }
}

/// Snapshot of the dialogue as seen by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub turn_index: usize,
    pub user_intent: Intent,
    pub action_counts: [u32; ActionKind::COUNT],
    pub last_action: Option<ActionKind>,
    /// Prior-action counts over `t_max`, last-action one-hot, persona
    /// attributes, `turn_index / t_max`, and the user's current attitude
    /// one-hot (Neutral encodes as all zeros). Both one-hots take the value
    /// [`INDICATOR_GAIN`] when set.
    pub history_features: Vec<f64>,
}

impl DialogueState {
    fn build(
        turn_index: usize,
        user_intent: Intent,
        action_counts: [u32; ActionKind::COUNT],
        last_action: Option<ActionKind>,
        persona: &Persona,
        t_max: usize,
    ) -> Self {
        let scale = 1.0 / t_max as f64;
        let mut f = Vec::with_capacity(FEATURE_DIM);
        f.extend(action_counts.iter().map(|&c| f64::from(c) * scale));
        f.extend(ActionKind::ALL.iter().map(|&k| if Some(k) == last_action { INDICATOR_GAIN } else { 0.0 }));
        f.extend(persona.features());
        f.push(turn_index as f64 * scale);
        f.extend(
            [Intent::Interested, Intent::Objecting, Intent::Annoyed, Intent::ReadyToBuy]
                .iter()
                .map(|&i| if i == user_intent { INDICATOR_GAIN } else { 0.0 }),
        );
        debug_assert_eq!(f.len(), FEATURE_DIM);
        Self { turn_index, user_intent, action_counts, last_action, history_features: f }
    }

    pub fn discount_offered(&self) -> bool {
        self.action_counts[ActionKind::OfferDiscount.index()] > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    pub utterance: Vec<String>,
    pub length_tokens: usize,
}

impl AgentAction {
    pub fn new(kind: ActionKind, utterance: Vec<String>) -> Self {
        let length_tokens = utterance.len();
        Self { kind, utterance, length_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub user_utterance: Vec<String>,
    pub next_state: DialogueState,
    /// Attitude the user ended the turn with; `Annoyed` when they walked away.
    pub user_attitude: Intent,
    pub terminal: bool,
    pub converted: bool,
}

/// Columns of a transition row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextOutcome {
    Attitude(Intent),
    Leave,
}

impl NextOutcome {
    pub const COLUMNS: [NextOutcome; 6] = [
        NextOutcome::Attitude(Intent::Neutral),
        NextOutcome::Attitude(Intent::Interested),
        NextOutcome::Attitude(Intent::Objecting),
        NextOutcome::Attitude(Intent::Annoyed),
        NextOutcome::Attitude(Intent::ReadyToBuy),
        NextOutcome::Leave,
    ];
}

pub const LEAVE_COLUMN: usize = 5;
pub const READY_COLUMN: usize = 4;
const ANNOYED_COLUMN: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    pub annoy_base: f64,
    pub busy_leave_factor: f64,
    pub discount_base: f64,
    pub discount_price_weight: f64,
    pub annoyed_close_termination: f64,
}

/// Raw next-attitude weights per (attitude, action kind).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    rows: [[[f64; 6]; ActionKind::COUNT]; 5],
    pub dynamics: Dynamics,
}

impl TransitionTable {
    pub fn raw_row(&self, intent: Intent, kind: ActionKind) -> Option<[f64; 6]> {
        intent.attitude_index().map(|i| self.rows[i][kind.index()])
    }

    /// Normalised next-outcome distribution after persona modulation. The
    /// special `AskClose` rules are not folded in; see [`Self::outcome_distribution`].
    pub fn row(&self, intent: Intent, kind: ActionKind, persona: &Persona) -> Option<[f64; 6]> {
        let mut w = self.raw_row(intent, kind)?;
        let d = &self.dynamics;
        match kind {
            ActionKind::Filler | ActionKind::RepeatScript => {
                w[ANNOYED_COLUMN] *= d.annoy_base + persona.skepticism;
                if persona.busy {
                    w[LEAVE_COLUMN] *= d.busy_leave_factor;
                }
            }
            ActionKind::OfferDiscount => {
                w[READY_COLUMN] *= d.discount_base + persona.price_sensitivity;
            }
            _ => {}
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Some(w)
    }

    pub fn conversion_probability(&self, persona: &Persona, discount_offered: bool) -> f64 {
        let absent = if discount_offered { 0.0 } else { 1.0 };
        (persona.base_acceptance
            - self.dynamics.discount_price_weight * persona.price_sensitivity * absent)
            .clamp(0.0, 1.0)
    }

    /// Full one-step law: `(P(convert), P(end without conversion), attitude
    /// distribution given the dialogue continues)`, ignoring the horizon cap.
    pub fn outcome_distribution(
        &self,
        intent: Intent,
        kind: ActionKind,
        persona: &Persona,
        discount_offered: bool,
    ) -> Option<(f64, f64, [f64; 5])> {
        let row = self.row(intent, kind, persona)?;
        let (convert, pre_end, rest) = match (intent, kind) {
            (Intent::ReadyToBuy, ActionKind::AskClose) => {
                let g = self.conversion_probability(persona, discount_offered);
                (g, 0.0, 1.0 - g)
            }
            (Intent::Annoyed, ActionKind::AskClose) => {
                let p = self.dynamics.annoyed_close_termination;
                (0.0, p, 1.0 - p)
            }
            _ => (0.0, 0.0, 1.0),
        };
        let mut attitudes = [0.0; 5];
        attitudes.copy_from_slice(&row[..5]);
        attitudes.iter_mut().for_each(|p| *p *= rest);
        Some((convert, pre_end + rest * row[LEAVE_COLUMN], attitudes))
    }
}

/// Agent utterance template: each position lists its jitter alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Template(Vec<Vec<String>>);

impl Template {
    fn parse(text: &str) -> Result<Self, String> {
        text.split_whitespace()
            .map(|tok| {
                if let Some(inner) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                    let alts: Vec<String> = inner.split('|').map(str::to_owned).collect();
                    if alts.iter().any(String::is_empty) {
                        return Err(format!("empty alternative in slot {tok}"));
                    }
                    Ok(alts)
                } else if tok.contains(['{', '}', '|']) {
                    Err(format!("malformed token {tok}"))
                } else {
                    Ok(vec![tok.to_owned()])
                }
            })
            .collect::<Result<_, _>>()
            .map(Template)
    }

    pub fn canonical(&self) -> Vec<String> {
        self.0.iter().map(|alts| alts[0].clone()).collect()
    }

    /// Draws one alternative per jitter slot; fixed tokens consume no randomness.
    pub fn render<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        self.0
            .iter()
            .map(|alts| {
                if alts.len() == 1 {
                    alts[0].clone()
                } else {
                    alts[rng.gen_range(0..alts.len())].clone()
                }
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.0.iter().flatten().map(String::as_str)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    schema_version: u32,
    personas: Vec<Persona>,
    dynamics: Dynamics,
    transitions: BTreeMap<String, BTreeMap<String, [f64; 6]>>,
    templates: BTreeMap<String, String>,
    user_templates: BTreeMap<String, String>,
}

/// Persona library, transition table and templates.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub personas: Vec<Persona>,
    pub table: TransitionTable,
    templates: Vec<Template>,
    user_attitude_replies: [Vec<String>; 5],
    converted_reply: Vec<String>,
    left_reply: Vec<String>,
}

impl EnvironmentSpec {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let raw: RawEnvironment =
            toml::from_str(text).map_err(|e| EnvError::Invalid(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../assets/environment.toml"))
            .expect("bundled environment file is valid")
    }

    fn from_raw(raw: RawEnvironment) -> Result<Self, EnvError> {
        let invalid = |m: String| EnvError::Invalid(m);
        if raw.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        if raw.personas.is_empty() {
            return Err(invalid("persona library is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &raw.personas {
            p.check()?;
            if !ids.insert(p.id) {
                return Err(invalid(format!("duplicate persona id {}", p.id)));
            }
        }

        let d = &raw.dynamics;
        for (key, v) in [
            ("annoy_base", d.annoy_base),
            ("busy_leave_factor", d.busy_leave_factor),
            ("discount_base", d.discount_base),
            ("discount_price_weight", d.discount_price_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("dynamics.{key} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&d.annoyed_close_termination) {
            return Err(invalid("dynamics.annoyed_close_termination must lie in [0, 1]".into()));
        }

        let mut rows = [[[0.0; 6]; ActionKind::COUNT]; 5];
        let mut seen = BTreeSet::new();
        for (intent_name, by_kind) in &raw.transitions {
            let intent = Intent::parse(intent_name)
                .ok_or_else(|| invalid(format!("unknown intent row {intent_name}")))?;
            for (kind_name, weights) in by_kind {
                let kind = ActionKind::parse(kind_name)
                    .ok_or_else(|| invalid(format!("unknown action kind {kind_name}")))?;
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(invalid(format!(
                        "transitions.{intent_name}.{kind_name}: weights must be >= 0 with positive sum"
                    )));
                }
                rows[intent.attitude_index().unwrap()][kind.index()] = *weights;
                seen.insert((intent, kind));
            }
        }
        for intent in Intent::ATTITUDES {
            for kind in ActionKind::ALL {
                if !seen.contains(&(intent, kind)) {
                    return Err(invalid(format!("missing transitions.{intent:?}.{kind:?}")));
                }
            }
        }
        let annoyed = Intent::Annoyed.attitude_index().unwrap();
        if rows[annoyed][ActionKind::AskClose.index()][LEAVE_COLUMN] != 0.0 {
            return Err(invalid(
                "transitions.Annoyed.AskClose must not carry Leave weight; use annoyed_close_termination".into(),
            ));
        }
        let table = TransitionTable { rows, dynamics: raw.dynamics };

        let mut templates = Vec::with_capacity(ActionKind::COUNT);
        for kind in ActionKind::ALL {
            let text = raw
                .templates
                .get(&format!("{kind:?}"))
                .ok_or_else(|| invalid(format!("missing templates.{kind:?}")))?;
            let t = Template::parse(text).map_err(|e| invalid(format!("templates.{kind:?}: {e}")))?;
            if t.is_empty() && kind != ActionKind::RepeatScript {
                return Err(invalid(format!("templates.{kind:?} is empty")));
            }
            templates.push(t);
        }
        if let Some(k) = raw.templates.keys().find(|k| ActionKind::parse(k).is_none()) {
            return Err(invalid(format!("unknown template key {k}")));
        }
        let vocab: BTreeSet<&str> = templates.iter().flat_map(Template::vocabulary).collect();
        if vocab.len() > MAX_VOCABULARY {
            return Err(invalid(format!(
                "template vocabulary has {} tokens, limit is {MAX_VOCABULARY}",
                vocab.len()
            )));
        }

        let reply = |key: &str| -> Result<Vec<String>, EnvError> {
            let text = raw
                .user_templates
                .get(key)
                .ok_or_else(|| invalid(format!("missing user_templates.{key}")))?;
            Ok(text.split_whitespace().map(str::to_owned).collect())
        };
        let user_attitude_replies = [
            reply("Neutral")?,
            reply("Interested")?,
            reply("Objecting")?,
            reply("Annoyed")?,
            reply("ReadyToBuy")?,
        ];
        let converted_reply = reply("Converted")?;
        let left_reply = reply("Left")?;
        let known = ["Neutral", "Interested", "Objecting", "Annoyed", "ReadyToBuy", "Converted", "Left"];
        if let Some(k) = raw.user_templates.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(invalid(format!("unknown user_templates key {k}")));
        }

        Ok(Self {
            personas: raw.personas,
            table,
            templates,
            user_attitude_replies,
            converted_reply,
            left_reply,
        })
    }

    pub fn template(&self, kind: ActionKind) -> &Template {
        &self.templates[kind.index()]
    }
}

/// Environment dynamics bound to a horizon.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub spec: EnvironmentSpec,
    /// Nominal horizon; also the scale of the count and turn features.
    pub t_max: usize,
    /// Turn after which dialogues are force-terminated (`<= t_max`).
    pub horizon: usize,
}

impl Simulator {
    pub fn new(spec: EnvironmentSpec, t_max: usize) -> Self {
        assert!(t_max >= 1, "t_max must be positive");
        Self { spec, t_max, horizon: t_max }
    }

    /// Same dynamics and features, dialogues cut after `horizon` turns.
    pub fn truncated(&self, horizon: usize) -> Self {
        assert!(horizon >= 1, "horizon must be positive");
        Self { horizon: horizon.min(self.t_max), ..self.clone() }
    }

    /// Initial state: turn 0, Neutral user, no history. The seed is accepted
    /// for interface symmetry; the initial state is deterministic.
    pub fn reset(&self, persona: &Persona, _seed: u64) -> DialogueState {
        DialogueState::build(0, Intent::Neutral, [0; ActionKind::COUNT], None, persona, self.t_max)
    }

    /// Renders the agent utterance for `kind`. `RepeatScript` re-emits the
    /// previous agent utterance, or the canonical greeting on the first turn.
    pub fn render_action<R: Rng + ?Sized>(
        &self,
        kind: ActionKind,
        previous: Option<&Vec<String>>,
        rng: &mut R,
    ) -> AgentAction {
        let utterance = match kind {
            ActionKind::RepeatScript => match previous {
                Some(prev) => prev.clone(),
                None => self.spec.template(ActionKind::Greet).canonical(),
            },
            _ => self.spec.template(kind).render(rng),
        };
        AgentAction::new(kind, utterance)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &DialogueState,
        action: &AgentAction,
        persona: &Persona,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        if state.user_intent == Intent::Terminated {
            return Err(EnvError::StepAfterTerminal);
        }
        let table = &self.spec.table;
        let kind = action.kind;
        let intent = state.user_intent;

        let mut converted = false;
        let mut ended = false;
        let mut attitude = None;
        match (intent, kind) {
            (Intent::ReadyToBuy, ActionKind::AskClose) => {
                let g = table.conversion_probability(persona, state.discount_offered());
                if rng.gen::<f64>() < g {
                    converted = true;
                    ended = true;
                    attitude = Some(Intent::ReadyToBuy);
                }
            }
            (Intent::Annoyed, ActionKind::AskClose) => {
                if rng.gen::<f64>() < table.dynamics.annoyed_close_termination {
                    ended = true;
                    attitude = Some(Intent::Annoyed);
                }
            }
            _ => {}
        }
        let mut left = false;
        let attitude = match attitude {
            Some(a) => a,
            None => {
                let row = table.row(intent, kind, persona).expect("non-terminal intent");
                match NextOutcome::COLUMNS[sample_index(&row, rng.gen::<f64>())] {
                    NextOutcome::Attitude(a) => a,
                    NextOutcome::Leave => {
                        ended = true;
                        left = true;
                        Intent::Annoyed
                    }
                }
            }
        };

        let turn_index = state.turn_index + 1;
        let terminal = ended || turn_index >= self.horizon;
        let mut counts = state.action_counts;
        counts[kind.index()] += 1;
        let next_intent = if terminal { Intent::Terminated } else { attitude };
        let next_state =
            DialogueState::build(turn_index, next_intent, counts, Some(kind), persona, self.t_max);

        let user_utterance = if converted {
            self.spec.converted_reply.clone()
        } else if left || (ended && intent == Intent::Annoyed) {
            self.spec.left_reply.clone()
        } else {
            self.spec.user_attitude_replies[attitude.attitude_index().unwrap()].clone()
        };

        Ok(StepOutcome { user_utterance, next_state, user_attitude: attitude, terminal, converted })
    }
}

/// Inverse-CDF draw from normalised `probs` with a uniform `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
