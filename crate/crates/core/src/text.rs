//! Text normalization shared by every loader.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes and lowercases.
pub fn normalize(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// Splits on whitespace after normalization.
pub fn normalized_tokens(s: &str) -> Vec<String> {
    normalize(s).split_whitespace().map(str::to_owned).collect()
}

/// Strips the scheme, a leading `www.` and lowercases.
///
/// `http://www.imdb.com/title/` and `imdb.com/title/` normalize identically.
pub fn normalize_url(url: &str) -> String {
    let url = normalize(url.trim());
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => url.as_str(),
    };
    rest.strip_prefix("www.").unwrap_or(rest).to_owned()
}

/// Host part of a normalized URL, e.g. `imdb.com`.
pub fn url_domain(url: &str) -> String {
    let n = normalize_url(url);
    n.split(['/', '?', '#']).next().unwrap_or("").to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_normalization() {
        assert_eq!(
            normalize_url("http://www.imdb.com/character/ch0002338/"),
            "imdb.com/character/ch0002338/"
        );
        assert_eq!(normalize_url("www.IMDB.com/x"), "imdb.com/x");
        assert_eq!(url_domain("www.imdb.com/title/tt1343092/"), "imdb.com");
        assert_eq!(url_domain("https://fandango.com"), "fandango.com");
    }

    #[test]
    fn nfc_lowercase() {
        // "e" + combining acute composes to a single code point.
        assert_eq!(normalize("Ame\u{301}lie"), "am\u{e9}lie");
    }
}
