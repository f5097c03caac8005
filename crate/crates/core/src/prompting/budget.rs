use serde::{Deserialize, Serialize};

use super::{Message, Part, PromptError, Role};

/// Heuristic token accounting for a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_prompt_tokens: usize,
    pub chars_per_token: f64,
    pub tokens_per_image: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            max_prompt_tokens: 32_768,
            chars_per_token: 4.0,
            tokens_per_image: 1024,
        }
    }
}

impl TokenBudget {
    pub fn validate(&self) -> Result<(), PromptError> {
        if !(self.chars_per_token.is_finite() && self.chars_per_token > 0.0) {
            return Err(PromptError::InvalidSpec("chars_per_token must be positive".into()));
        }
        if self.max_prompt_tokens == 0 {
            return Err(PromptError::InvalidSpec("max_prompt_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub initial_tokens: usize,
    pub estimated_tokens: usize,
    pub fits: bool,
    pub dropped_exemplars: usize,
}

pub fn estimate_tokens(messages: &[Message], budget: &TokenBudget) -> usize {
    messages
        .iter()
        .flat_map(|m| &m.parts)
        .map(|p| match p {
            Part::Text { text } => (text.chars().count() as f64 / budget.chars_per_token).ceil() as usize,
            Part::Image { .. } => budget.tokens_per_image,
        })
        .sum()
}

/// Trim exemplar pairs from the end of the exemplar block (the lowest-ranked
/// ones) until the prompt fits. The system message and the live query are
/// never trimmed.
pub fn check_budget(
    mut messages: Vec<Message>,
    budget: &TokenBudget,
) -> Result<(Vec<Message>, BudgetReport), PromptError> {
    let initial = estimate_tokens(&messages, budget);
    let mut estimated = initial;
    let mut dropped = 0;

    let head = messages.iter().take_while(|m| m.role == Role::System).count();
    let has_live = messages.last().is_some_and(|m| m.role == Role::User) && messages.len() > head;
    let live = usize::from(has_live);

    while estimated > budget.max_prompt_tokens {
        let block = messages.len() - head - live;
        if block == 0 {
            return Err(PromptError::QueryOverBudget {
                estimated,
                budget: budget.max_prompt_tokens,
            });
        }
        let end = messages.len() - live;
        let start = end - block.min(2);
        messages.drain(start..end);
        dropped += 1;
        estimated = estimate_tokens(&messages, budget);
    }

    Ok((
        messages,
        BudgetReport {
            initial_tokens: initial,
            estimated_tokens: estimated,
            fits: true,
            dropped_exemplars: dropped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(exemplars: usize) -> Vec<Message> {
        let mut m = vec![Message::system("s".repeat(40))];
        for i in 0..exemplars {
            m.push(Message::user(&[], format!("exemplar query {i}").repeat(2)));
            m.push(Message::assistant("a".repeat(40)));
        }
        m.push(Message::user(&[], "q".repeat(40)));
        m
    }

    #[test]
    fn estimate_counts_chars_and_images() {
        let b = TokenBudget {
            max_prompt_tokens: 10,
            chars_per_token: 4.0,
            tokens_per_image: 100,
        };
        let img = crate::corpus::ImageRef {
            rel_path: "x".into(),
            path: "x".into(),
            byte_length: 1,
            width_px: None,
            height_px: None,
        };
        let m = vec![Message::system("abcde"), Message::user(&[img.clone(), img], "abcd")];
        assert_eq!(estimate_tokens(&m, &b), 2 + 1 + 200);
    }

    #[test]
    fn within_budget_is_untouched() {
        let m = prompt(2);
        let (out, r) = check_budget(m.clone(), &TokenBudget::default()).unwrap();
        assert_eq!(out, m);
        assert_eq!(r.dropped_exemplars, 0);
        assert!(r.fits);
    }

    #[test]
    fn drops_last_exemplar_first() {
        let m = prompt(2);
        let b0 = TokenBudget::default();
        let total = estimate_tokens(&m, &b0);
        let pair = estimate_tokens(&m[3..5], &b0);
        let b = TokenBudget {
            max_prompt_tokens: total - 1,
            ..b0
        };
        let (out, r) = check_budget(m.clone(), &b).unwrap();
        assert_eq!(r.dropped_exemplars, 1);
        assert_eq!(r.estimated_tokens, total - pair);
        assert_eq!(out.len(), 4);
        assert_eq!(out[1], m[1]);
        assert_eq!(out[3], m[5]);
    }

    #[test]
    fn query_alone_over_budget_fails() {
        let b = TokenBudget {
            max_prompt_tokens: 5,
            ..TokenBudget::default()
        };
        let err = check_budget(prompt(1), &b).unwrap_err();
        assert!(err.to_string().contains("query over budget"));
    }
}
