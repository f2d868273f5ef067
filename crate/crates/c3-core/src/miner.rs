//! Context mining: token-budgeted few-shot prompts that ask the LLM to
//! pick one prepared context (or MISC) for each parameter site.
//!
//! Packing follows a fixed budget discipline: reserve `remain` tokens for
//! the response, charge the role-setting message and the target question
//! first, then add category shots in registry order until the next shot
//! no longer fits. The target question is never dropped.

use serde::{Deserialize, Serialize};

use crate::clients::{cache_key, ChatMessage, ChatRequest, LlmClient};
use crate::code_model::ParameterSite;
use crate::error::{Error, Result};
use crate::registry::{ContextRegistry, ReadabilityContext, TypeGroup};

/// Default conversation token limit.
pub const DEFAULT_MAX_TOKEN: usize = 4096;
/// Default token space reserved for the model response.
pub const DEFAULT_REMAIN: usize = 20;
/// Identifier of the built-in byte-ratio token estimator.
pub const DEFAULT_TOKENIZER: &str = "default";

/// Token budget for prompt construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_token: usize,
    pub remain: usize,
    pub tokenizer_id: String,
}

impl PromptBudget {
    pub fn new(max_token: usize, remain: usize, tokenizer_id: impl Into<String>) -> Result<Self> {
        if max_token == 0 || remain == 0 {
            return Err(Error::precondition("PromptBudget", "max_token and remain must be positive"));
        }
        if remain >= max_token {
            return Err(Error::precondition("PromptBudget", "remain must be smaller than max_token"));
        }
        Ok(Self { max_token, remain, tokenizer_id: tokenizer_id.into() })
    }

    /// Tokens available for prompt messages.
    pub fn prompt_allowance(&self) -> usize {
        self.max_token - self.remain
    }
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            max_token: DEFAULT_MAX_TOKEN,
            remain: DEFAULT_REMAIN,
            tokenizer_id: DEFAULT_TOKENIZER.to_string(),
        }
    }
}

/// Estimate the token count of `text` under the budget's tokenizer.
///
/// The built-in estimator charges one token per four bytes, rounded up:
/// a model-agnostic proxy that is monotone in text length. Exact
/// tokenizers can be plugged in by id.
pub fn estimate_tokens(text: &str, budget: &PromptBudget) -> Result<usize> {
    match budget.tokenizer_id.as_str() {
        "default" => Ok(text.len().div_ceil(4)),
        "chars" => Ok(text.chars().count().div_ceil(4)),
        other => Err(Error::UnknownTokenizer(other.to_string())),
    }
}

/// Estimated cost of a whole message list.
pub fn estimate_prompt_tokens(messages: &[ChatMessage], budget: &PromptBudget) -> Result<usize> {
    let mut total = 0;
    for m in messages {
        total += estimate_tokens(&m.content, budget)?;
    }
    Ok(total)
}

/// Pack `[system] ++ shots ++ [target]` within the budget. Shots are taken
/// in order and packing stops at the first shot that does not fit, which
/// keeps the shot count monotone in `max_token`.
pub(crate) fn pack_prompt(
    system: &str,
    shots: &[(String, String)],
    target: &str,
    budget: &PromptBudget,
) -> Result<Vec<ChatMessage>> {
    let allowance = budget.prompt_allowance();
    let fixed = estimate_tokens(system, budget)? + estimate_tokens(target, budget)?;
    if fixed > allowance {
        return Err(Error::BudgetExhausted { needed: fixed, available: allowance });
    }
    let mut rest = allowance - fixed;
    let mut messages = vec![ChatMessage::system(system)];
    for (question, answer) in shots {
        let cost = estimate_tokens(question, budget)? + estimate_tokens(answer, budget)?;
        if cost > rest {
            break;
        }
        rest -= cost;
        messages.push(ChatMessage::user(question));
        messages.push(ChatMessage::assistant(answer));
    }
    messages.push(ChatMessage::user(target));
    Ok(messages)
}

const MINING_SYSTEM_ROLE: &str = "You are a code analysis assistant. Given a method and one of its \
parameters, choose the single readability context that the parameter's values should match. \
Answer with exactly one context name from the offered list, or MISC if none applies.";

fn context_option_list(registry: &ContextRegistry, group: TypeGroup) -> String {
    registry
        .contexts_of_group(group)
        .map(|c| {
            let example = c.examples.first().map(String::as_str).unwrap_or("");
            format!("{} (\"{}\")", c.name, example)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn mining_target_question(site: &ParameterSite, registry: &ContextRegistry) -> String {
    let mut q = format!(
        "Parameter: {param}\nMethod: {method}\nSource:\n{source}\nWhich context should the value \
of \"{param}\" match? Choose one of: {options}.\nAnswer with one context name or MISC.",
        param = site.param_name,
        method = site.method_name(),
        source = site.method_source,
        options = context_option_list(registry, site.declared_type.group()),
    );
    if site.declared_type.group() == TypeGroup::Number && !site.operators.is_empty() {
        let ops: Vec<&str> = site.operators.iter().map(String::as_str).collect();
        q.push_str(&format!(
            "\nThe operators involved by this parameter are [{}].",
            ops.join(", ")
        ));
    }
    q
}

fn category_shots(registry: &ContextRegistry) -> Vec<(String, String)> {
    registry
        .categories()
        .iter()
        .map(|c| (c.shot.question.clone(), c.shot.answer.clone()))
        .collect()
}

/// Build the mining prompt for one site. Fails when the target question
/// alone exceeds the budget; callers may truncate the method source and
/// retry (see [`Miner::mine_site`]).
pub fn build_mining_prompt(
    site: &ParameterSite,
    registry: &ContextRegistry,
    budget: &PromptBudget,
) -> Result<Vec<ChatMessage>> {
    pack_prompt(
        MINING_SYSTEM_ROLE,
        &category_shots(registry),
        &mining_target_question(site, registry),
        budget,
    )
}

/// Mining outcome: a registry context or MISC (no context matches).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name")]
pub enum MiningOutcome {
    #[serde(rename = "CONTEXT")]
    Context(String),
    #[serde(rename = "MISC")]
    Misc,
}

impl MiningOutcome {
    pub fn context_name(&self) -> Option<&str> {
        match self {
            MiningOutcome::Context(name) => Some(name),
            MiningOutcome::Misc => None,
        }
    }
}

/// One mined parameter with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningResult {
    pub site: ParameterSite,
    pub outcome: MiningOutcome,
    pub raw_response: String,
    pub prompt_hash: String,
    pub model_id: String,
}

/// Normalize a model response and extract the chosen context.
///
/// The response is uppercased and split on every character outside
/// `[A-Z0-9_]`; the outcome is CONTEXT(name) precisely when exactly one
/// distinct registry name occurs as a whole token, MISC otherwise.
pub fn parse_mining_response(raw: &str, registry: &ContextRegistry) -> MiningOutcome {
    let upper = raw.trim().to_uppercase();
    let mut found: Vec<String> = Vec::new();
    for token in upper.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        if token.is_empty() {
            continue;
        }
        if registry.contains(token) && !found.iter().any(|f| f == token) {
            found.push(token.to_string());
        }
    }
    match found.len() {
        1 => MiningOutcome::Context(found.remove(0)),
        _ => MiningOutcome::Misc,
    }
}

/// Drop trailing lines from an oversized method source, marking the cut.
fn truncate_method_source(source: &str) -> Option<String> {
    const MARKER: &str = "(truncated)";
    let body = source.strip_suffix(&format!("\n{MARKER}")).unwrap_or(source);
    let mut lines: Vec<&str> = body.lines().collect();
    if lines.len() <= 1 {
        return None;
    }
    lines.pop();
    Some(format!("{}\n{MARKER}", lines.join("\n")))
}

/// Drives mining over sites through an LLM client.
pub struct Miner<'a> {
    registry: &'a ContextRegistry,
    budget: PromptBudget,
    client: &'a LlmClient,
    votes: usize,
}

impl<'a> Miner<'a> {
    pub fn new(registry: &'a ContextRegistry, budget: PromptBudget, client: &'a LlmClient) -> Self {
        Self { registry, budget, client, votes: 1 }
    }

    /// Majority voting over repeated completions. With a warm cache the
    /// repeats collapse to one recorded response.
    pub fn with_votes(mut self, votes: usize) -> Self {
        self.votes = votes.max(1);
        self
    }

    /// Mine one site: build the prompt (truncating an oversized method
    /// source line by line when necessary), complete, and parse.
    pub fn mine_site(&self, site: &ParameterSite) -> Result<MiningResult> {
        let site_label = format!("{}#{}", site.method_sig, site.param_name);
        let mut effective = site.clone();
        let messages = loop {
            match build_mining_prompt(&effective, self.registry, &self.budget) {
                Ok(m) => break m,
                Err(Error::BudgetExhausted { needed, available }) => {
                    match truncate_method_source(&effective.method_source) {
                        Some(shorter) => effective.method_source = shorter,
                        None => {
                            return Err(Error::Mining {
                                site: site_label,
                                source: Box::new(Error::BudgetExhausted { needed, available }),
                            })
                        }
                    }
                }
                Err(e) => {
                    return Err(Error::Mining { site: site_label, source: Box::new(e) });
                }
            }
        };
        let request = ChatRequest::new(messages, self.client.model_id(), self.budget.remain);
        let prompt_hash = cache_key(&request);

        let mut tally: Vec<(MiningOutcome, usize)> = Vec::new();
        let mut first_response = String::new();
        for vote in 0..self.votes {
            let response = self
                .client
                .complete(&request)
                .map_err(|e| Error::Mining { site: site_label.clone(), source: Box::new(e) })?;
            if vote == 0 {
                first_response = response.clone();
            }
            let outcome = parse_mining_response(&response, self.registry);
            match tally.iter_mut().find(|(o, _)| *o == outcome) {
                Some((_, n)) => *n += 1,
                None => tally.push((outcome, 1)),
            }
        }
        let outcome = tally
            .iter()
            .max_by_key(|(_, n)| *n)
            .map(|(o, _)| o.clone())
            .expect("at least one vote");

        Ok(MiningResult {
            site: site.clone(),
            outcome,
            raw_response: first_response,
            prompt_hash,
            model_id: self.client.model_id().to_string(),
        })
    }

    /// Mine all sites, returning results sorted by site key.
    pub fn mine_all(&self, sites: &[ParameterSite]) -> Result<Vec<MiningResult>> {
        let mut results = Vec::with_capacity(sites.len());
        for site in sites {
            results.push(self.mine_site(site)?);
        }
        results.sort_by(|a, b| a.site.key().cmp(&b.site.key()));
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::Role;
    use crate::code_model::{extract_parameters, SourceUnit, UnitKind};
    use crate::registry::ContextRegistry;

    fn sites_for(src: &str) -> Vec<ParameterSite> {
        extract_parameters(&SourceUnit::new("T.java", src, UnitKind::CodeUnderTest)).unwrap()
    }

    fn username_site() -> ParameterSite {
        sites_for("class User { User(String username, String password, String email) {} }")
            .remove(0)
    }

    #[test]
    fn estimator_contract() {
        let budget = PromptBudget::default();
        assert_eq!(estimate_tokens("", &budget).unwrap(), 0);
        let n = estimate_tokens("a b c", &budget).unwrap();
        assert!(n > 0 && n <= 5);
        assert_eq!(
            estimate_tokens("same text", &budget).unwrap(),
            estimate_tokens("same text", &budget).unwrap()
        );
        let unknown = PromptBudget::new(100, 10, "nope").unwrap();
        assert!(matches!(
            estimate_tokens("x", &unknown),
            Err(Error::UnknownTokenizer(_))
        ));
    }

    #[test]
    fn estimator_is_monotone_in_length() {
        let budget = PromptBudget::default();
        let mut text = String::new();
        let mut last = 0;
        for _ in 0..64 {
            text.push('x');
            let n = estimate_tokens(&text, &budget).unwrap();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn budget_invariants_enforced() {
        assert!(PromptBudget::new(0, 1, "default").is_err());
        assert!(PromptBudget::new(10, 10, "default").is_err());
        assert!(PromptBudget::new(10, 11, "default").is_err());
        assert!(PromptBudget::new(4096, 20, "default").is_ok());
    }

    #[test]
    fn string_prompt_lists_all_string_contexts() {
        let registry = ContextRegistry::load_default().unwrap();
        let budget = PromptBudget::default();
        let messages = build_mining_prompt(&username_site(), &registry, &budget).unwrap();
        assert_eq!(messages[0].role, Role::System);
        let target = &messages.last().unwrap().content;
        for ctx in registry.contexts_of_group(TypeGroup::String) {
            assert!(target.contains(&ctx.name), "missing {}", ctx.name);
        }
        assert!(!target.contains("BINARY"));
        assert!(!target.contains("operators involved"));
        let total = estimate_prompt_tokens(&messages, &budget).unwrap();
        assert!(total <= budget.prompt_allowance());
    }

    #[test]
    fn number_prompt_appends_operator_sentence() {
        let registry = ContextRegistry::load_default().unwrap();
        let sites = sites_for("class Calc { int or(int a, int b) { return a | b; } }");
        let messages =
            build_mining_prompt(&sites[0], &registry, &PromptBudget::default()).unwrap();
        let target = &messages.last().unwrap().content;
        assert!(target.ends_with("The operators involved by this parameter are [|]."));
        assert!(target.contains("BINARY"));
        assert!(!target.contains("PERSON"));
    }

    #[test]
    fn tiny_budget_keeps_only_system_and_target() {
        let registry = ContextRegistry::load_default().unwrap();
        let site = username_site();
        // binary search the smallest budget that fits at all, then verify
        // the prompt is exactly [SYSTEM, target] at that point
        let mut budget = PromptBudget::new(4096, 20, "default").unwrap();
        let full = build_mining_prompt(&site, &registry, &budget).unwrap();
        assert!(full.len() > 2);
        let fixed = estimate_tokens(&full[0].content, &budget).unwrap()
            + estimate_tokens(&full.last().unwrap().content, &budget).unwrap();
        budget.max_token = fixed + budget.remain;
        let minimal = build_mining_prompt(&site, &registry, &budget).unwrap();
        assert_eq!(minimal.len(), 2);
        assert_eq!(minimal[0].role, Role::System);
        assert_eq!(minimal[1].role, Role::User);
        budget.max_token -= 1;
        assert!(matches!(
            build_mining_prompt(&site, &registry, &budget),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn shot_count_monotone_in_max_token() {
        let registry = ContextRegistry::load_default().unwrap();
        let site = username_site();
        let mut last_shots = 0usize;
        for max_token in (600..5000).step_by(97) {
            let budget = PromptBudget::new(max_token, 20, "default").unwrap();
            match build_mining_prompt(&site, &registry, &budget) {
                Ok(messages) => {
                    let shots = (messages.len() - 2) / 2;
                    assert!(
                        shots >= last_shots,
                        "shots dropped from {last_shots} to {shots} at max_token={max_token}"
                    );
                    last_shots = shots;
                }
                Err(Error::BudgetExhausted { .. }) => assert_eq!(last_shots, 0),
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(last_shots, registry.categories().len());
    }

    #[test]
    fn response_parsing_normalizes() {
        let registry = ContextRegistry::load_default().unwrap();
        assert_eq!(
            parse_mining_response("PERSON", &registry),
            MiningOutcome::Context("PERSON".into())
        );
        assert_eq!(
            parse_mining_response("The context is: EMAIL.", &registry),
            MiningOutcome::Context("EMAIL".into())
        );
        assert_eq!(
            parse_mining_response("\"email\"\n", &registry),
            MiningOutcome::Context("EMAIL".into())
        );
        assert_eq!(parse_mining_response("EMAIL or URL", &registry), MiningOutcome::Misc);
        assert_eq!(parse_mining_response("MISC", &registry), MiningOutcome::Misc);
        assert_eq!(parse_mining_response("", &registry), MiningOutcome::Misc);
        assert_eq!(parse_mining_response("EMAILS", &registry), MiningOutcome::Misc);
        // repeated mention of one name is still unambiguous
        assert_eq!(
            parse_mining_response("EMAIL, definitely EMAIL", &registry),
            MiningOutcome::Context("EMAIL".into())
        );
    }

    #[test]
    fn mine_site_uses_cache_and_truncates_oversized_sources() {
        let registry = ContextRegistry::load_default().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let client = crate::clients::LlmClient::offline(dir.path().to_path_buf());
        let budget = PromptBudget::default();

        let mut site = username_site();
        site.method_source = format!("{}\n{}", site.method_source, "// filler\n".repeat(4000));
        // record the response for the prompt as it will be built after truncation
        let miner = Miner::new(&registry, budget.clone(), &client);
        let mut effective = site.clone();
        let messages = loop {
            match build_mining_prompt(&effective, &registry, &budget) {
                Ok(m) => break m,
                Err(_) => {
                    effective.method_source = truncate_method_source(&effective.method_source).unwrap()
                }
            }
        };
        assert!(effective.method_source.ends_with("(truncated)"));
        let request = ChatRequest::new(messages, client.model_id(), budget.remain);
        client.warm_cache(&request, "PERSON").unwrap();

        let result = miner.mine_site(&site).unwrap();
        assert_eq!(result.outcome, MiningOutcome::Context("PERSON".into()));
        assert_eq!(result.prompt_hash, cache_key(&request));
        assert_eq!(result.site, site, "result keeps the original site");
    }
}
