//! Token counting for budget enforcement.

/// Counts tokens in rendered prompt text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Model-agnostic proxy: words (maximal alphanumeric runs, so whitespace and
/// punctuation both separate) times 4/3, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProxyTokenCounter;

impl ProxyTokenCounter {
    pub fn words(text: &str) -> usize {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .count()
    }
}

impl TokenCounter for ProxyTokenCounter {
    fn count(&self, text: &str) -> usize {
        (Self::words(text) * 4).div_ceil(3)
    }
}

impl<F> TokenCounter for F
where
    F: Fn(&str) -> usize + Send + Sync,
{
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}
