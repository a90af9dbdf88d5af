//! Language-model proposer: prompt rendering, transport and strict JSON parsing.

use serde::{Deserialize, Serialize};

use super::{Proposal, Proposer, ProposerError, RunLog};
use crate::config::{
    field_kind, get_field, set_field, ArchConfig, Condition, ConfigMutation, FieldEdit, FieldValue, HpConfig,
    SearchConstraint, ARCH_FIELDS, HP_FIELDS,
};

pub const LLM_ENDPOINT_ENV: &str = "SEARCHLAB_LLM_ENDPOINT";
pub const LLM_KEY_ENV: &str = "SEARCHLAB_LLM_KEY";
pub const LLM_MAX_ATTEMPTS: usize = 3;
/// Included verbatim in every hyperparameter-only prompt.
pub const HP_ONLY_SENTENCE: &str = "Do NOT change model architecture.";

/// Sends one system + user exchange and returns the reply text.
pub trait Transport {
    fn complete(&mut self, model: &str, system: &str, user: &str) -> Result<String, ProposerError>;
}

/// Prompt pair with `{placeholders}`: condition, constraint, mutable_fields,
/// current_config, history, best_bpb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

const SYSTEM_TEMPLATE: &str = "You are running a sequential search over a small autoregressive transformer \
trained for a fixed budget on one data track. Each step you make one coherent modification to the \
configuration; it is trained and evaluated on validation bits per byte (val_bpb, lower is better). The change \
is kept if val_bpb strictly improves on the best so far, otherwise it is reverted.\n\
{constraint}\n\
You may only edit these fields: {mutable_fields}.\n\
Reply with a single JSON object and nothing else:\n\
{\"edits\": [{\"field\": \"<name>\", \"new_value\": <value>}], \"rationale\": \"<one sentence>\"}";

const USER_TEMPLATE: &str = "Condition: {condition}\nBest val_bpb so far: {best_bpb}\n\n\
Current configuration:\n{current_config}\n\
Experiment history (most recent last):\n{history}\n\
Propose the next modification.";

impl PromptTemplate {
    /// The stock prompts; `{constraint}` expands per condition at render time.
    pub fn standard() -> Self {
        Self { system: SYSTEM_TEMPLATE.to_string(), user: USER_TEMPLATE.to_string() }
    }

    fn constraint_text(c: &SearchConstraint) -> String {
        match c.condition {
            Condition::HpOnly => format!(
                "{HP_ONLY_SENTENCE} Only hyperparameters (learning rates, weight decay, Adam betas, schedule, batch) may change."
            ),
            Condition::FixedDefault => "No field may change.".to_string(),
            _ => "Architecture and hyperparameter fields may both change.".to_string(),
        }
    }

    /// Returns (system, user) with every placeholder substituted. Hyperparameter-only
    /// prompts always carry [`HP_ONLY_SENTENCE`], even from custom templates.
    pub fn render(&self, history: &RunLog, current: (&ArchConfig, &HpConfig), c: &SearchConstraint) -> (String, String) {
        let fields: Vec<&str> = c.mutable_fields.iter().map(String::as_str).collect();
        let config: String = ARCH_FIELDS
            .iter()
            .chain(HP_FIELDS)
            .map(|f| format!("  {f} = {}\n", get_field(current.0, current.1, f).expect("known field")))
            .collect();
        let best = history.best_val_bpb().map_or("none".to_string(), |b| format!("{b:.6}"));
        let fill = |t: &str| {
            t.replace("{constraint}", &Self::constraint_text(c))
                .replace("{mutable_fields}", &fields.join(", "))
                .replace("{condition}", c.condition.as_str())
                .replace("{best_bpb}", &best)
                .replace("{current_config}", &config)
                .replace("{history}", &render_history(history))
        };
        let (mut system, user) = (fill(&self.system), fill(&self.user));
        if c.condition == Condition::HpOnly && !system.contains(HP_ONLY_SENTENCE) && !user.contains(HP_ONLY_SENTENCE) {
            system = format!("{HP_ONLY_SENTENCE}\n{system}");
        }
        (system, user)
    }
}

/// One line per experiment: index, edits, outcome.
pub fn render_history(log: &RunLog) -> String {
    let mut out = match log.header.baseline_val_bpb {
        Some(b) => format!("  baseline: val_bpb {b:.6}\n"),
        None => "  baseline: crashed\n".to_string(),
    };
    for r in &log.records {
        let edits: Vec<String> =
            r.mutation.edits.iter().map(|e| format!("{} {} -> {}", e.field, e.old_value, e.new_value)).collect();
        let edits = if edits.is_empty() { "no-op".to_string() } else { edits.join("; ") };
        let outcome = match (r.rejected, r.val_bpb) {
            (true, _) => "rejected".to_string(),
            (false, None) => "crashed".to_string(),
            (false, Some(v)) => format!("val_bpb {v:.6} {}", if r.kept { "KEPT" } else { "reverted" }),
        };
        out.push_str(&format!("  #{}: {edits}: {outcome}\n", r.index));
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdit {
    field: String,
    new_value: FieldValue,
    #[serde(default)]
    #[allow(dead_code)]
    old_value: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMutation {
    edits: Vec<RawEdit>,
    #[serde(default)]
    rationale: String,
}

/// Finds the first JSON object in `text` that parses as a mutation over known
/// fields with convertible values. Old values always come from `current`.
pub fn extract_mutation(text: &str, current: (&ArchConfig, &HpConfig)) -> Result<ConfigMutation, String> {
    let mut last_err = "no JSON object in response".to_string();
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<RawMutation>();
        let raw = match stream.next() {
            Some(Ok(raw)) => raw,
            Some(Err(e)) => {
                last_err = e.to_string();
                continue;
            }
            None => continue,
        };
        let (mut arch, mut hp) = (current.0.clone(), current.1.clone());
        let mut edits = Vec::new();
        for e in raw.edits {
            if field_kind(&e.field).is_none() {
                return Err(format!("unknown field `{}`", e.field));
            }
            let old_value = get_field(current.0, current.1, &e.field).expect("known field");
            set_field(&mut arch, &mut hp, &e.field, &e.new_value).map_err(|err| err.to_string())?;
            edits.push(FieldEdit { field: e.field, old_value, new_value: e.new_value });
        }
        return Ok(ConfigMutation { edits, rationale: raw.rationale });
    }
    Err(last_err)
}

/// Proposer backed by a chat model.
pub struct LlmProposer<T> {
    pub transport: T,
    pub model_name: String,
    pub template: Option<PromptTemplate>,
    pub max_attempts: usize,
}

impl<T: Transport> LlmProposer<T> {
    /// `template = None` uses [`PromptTemplate::standard`].
    pub fn with_transport(transport: T, model_name: impl Into<String>, template: Option<PromptTemplate>) -> Self {
        Self { transport, model_name: model_name.into(), template, max_attempts: LLM_MAX_ATTEMPTS }
    }
}

impl<T: Transport> Proposer for LlmProposer<T> {
    fn propose(
        &mut self,
        history: &RunLog,
        current: (&ArchConfig, &HpConfig),
        constraint: &SearchConstraint,
    ) -> Result<Proposal, ProposerError> {
        let template = self.template.clone().unwrap_or_else(PromptTemplate::standard);
        let (system, user) = template.render(history, current, constraint);
        let mut last = String::new();
        for _ in 0..self.max_attempts.max(1) {
            let reply = self.transport.complete(&self.model_name, &system, &user)?;
            match extract_mutation(&reply, current) {
                Ok(m) => return Ok(m.into()),
                Err(e) => last = e,
            }
        }
        Ok(Proposal {
            mutation: ConfigMutation::noop(format!("malformed response after {} attempts: {last}", self.max_attempts)),
            malformed: true,
        })
    }

    fn descriptor(&self) -> String {
        format!("llm:{}", self.model_name)
    }
}

/// OpenAI-compatible chat-completions client: POSTs
/// `{model, messages, temperature: 0}` with a bearer key and reads
/// `choices[0].message.content`.
#[cfg(feature = "http")]
pub struct HttpTransport {
    endpoint: String,
    key: String,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), key: key.into(), agent }
    }
}

#[cfg(feature = "http")]
impl Transport for HttpTransport {
    fn complete(&mut self, model: &str, system: &str, user: &str) -> Result<String, ProposerError> {
        let body = serde_json::json!({
            "model": model,
            "temperature": 0.0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| ProposerError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(|e| ProposerError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProposerError::Auth(format!("HTTP {status}"))),
            _ => return Err(ProposerError::Network(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
        }
        let content = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.pointer("/choices/0/message/content").and_then(|c| c.as_str()).map(str::to_string));
        // Non-conforming bodies go to the parser as-is and fail there if needed.
        Ok(content.unwrap_or(text))
    }
}

/// HTTP proposer for `endpoint` (or `$SEARCHLAB_LLM_ENDPOINT` when `None`),
/// keyed by `$SEARCHLAB_LLM_KEY`.
#[cfg(feature = "http")]
pub fn llm_proposer(
    endpoint: Option<&str>,
    model_name: &str,
    template: Option<PromptTemplate>,
) -> Result<LlmProposer<HttpTransport>, ProposerError> {
    let endpoint = match endpoint {
        Some(e) => e.to_string(),
        None => std::env::var(LLM_ENDPOINT_ENV).map_err(|_| ProposerError::Config(format!("{LLM_ENDPOINT_ENV} is not set")))?,
    };
    let key = std::env::var(LLM_KEY_ENV).map_err(|_| ProposerError::Config(format!("{LLM_KEY_ENV} is not set")))?;
    Ok(LlmProposer::with_transport(HttpTransport::new(endpoint, key), model_name, template))
}
