use super::CorpusError;

/// Lowercases, drops every punctuation mark except commas, splits commas into
/// their own tokens and tokenizes on whitespace.
pub fn preprocess_sentence(raw: &str) -> Result<Vec<String>, CorpusError> {
    let mut cleaned = String::with_capacity(raw.len() + 8);
    for ch in raw.chars() {
        if ch == ',' {
            cleaned.push_str(" , ");
        } else if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else if ch.is_whitespace() {
            cleaned.push(' ');
        }
        // any other punctuation or symbol is removed in place
    }
    let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptySentence(raw.to_owned()));
    }
    Ok(tokens)
}
