//! Transcript normalization applied to hypotheses and references before scoring.

use std::sync::OnceLock;

use regex::Regex;

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] =
    ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
const SCALES: [&str; 7] =
    ["", "thousand", "million", "billion", "trillion", "quadrillion", "quintillion"];

fn below_thousand(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!(n < 1000);
    let (h, rest) = (n / 100, n % 100);
    if h > 0 {
        out.push(ONES[h as usize]);
        out.push("hundred");
    }
    if rest == 0 {
        return;
    }
    if rest < 20 {
        out.push(ONES[rest as usize]);
    } else {
        out.push(TENS[(rest / 10) as usize]);
        if rest % 10 > 0 {
            out.push(ONES[(rest % 10) as usize]);
        }
    }
}

/// English cardinal words without hyphens or "and": 21 -> "twenty one",
/// 1905 -> "one thousand nine hundred five".
pub fn number_to_words(n: u64) -> String {
    if n == 0 {
        return "zero".into();
    }
    let mut groups = Vec::new();
    let mut m = n;
    while m > 0 {
        groups.push(m % 1000);
        m /= 1000;
    }
    let mut words = Vec::new();
    for (i, &g) in groups.iter().enumerate().rev() {
        if g == 0 {
            continue;
        }
        below_thousand(g, &mut words);
        if i > 0 {
            words.push(SCALES[i]);
        }
    }
    words.join(" ")
}

/// Spells a digit string; strings too long for u64 are read digit by digit.
fn digits_to_words(s: &str) -> String {
    match s.parse::<u64>() {
        Ok(n) => number_to_words(n),
        Err(_) => s
            .bytes()
            .map(|b| ONES[(b - b'0') as usize])
            .collect::<Vec<_>>()
            .join(" "),
    }
}

struct Patterns {
    parens: Regex,
    digits: Regex,
    punct: Regex,
    spaces: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        parens: Regex::new(r"\([^()]*\)").unwrap(),
        digits: Regex::new(r"[0-9]+").unwrap(),
        // ASCII punctuation plus every Unicode punctuation category.
        punct: Regex::new(r"[!-/:-@\[-`{-~\p{P}]").unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
    })
}

/// Removes parenthesized groups, lowercases, spells out digits, replaces
/// punctuation with spaces and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let p = patterns();
    let mut cur = s.to_string();
    // innermost groups first, so nested parentheses disappear entirely
    loop {
        let next = p.parens.replace_all(&cur, " ").into_owned();
        if next == cur {
            break;
        }
        cur = next;
    }
    let lower = cur.to_lowercase();
    let spoken = p.digits.replace_all(&lower, |c: &regex::Captures| format!(" {} ", digits_to_words(&c[0])));
    let unpunct = p.punct.replace_all(&spoken, " ");
    p.spaces.replace_all(unpunct.trim(), " ").trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(normalize_text("Hello, World! (Applause)"), "hello world");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("I have 21 cats."), "i have twenty one cats");
        assert_eq!(normalize_text("a ((nested) group) b"), "a b");
        assert_eq!(normalize_text("¿Qué tal?  «bien»"), "qué tal bien");
        assert_eq!(normalize_text("x(Music)y"), "x y");
    }

    #[test]
    fn numbers() {
        assert_eq!(number_to_words(0), "zero");
        assert_eq!(number_to_words(13), "thirteen");
        assert_eq!(number_to_words(40), "forty");
        assert_eq!(number_to_words(100), "one hundred");
        assert_eq!(number_to_words(105), "one hundred five");
        assert_eq!(number_to_words(1000), "one thousand");
        assert_eq!(number_to_words(9999), "nine thousand nine hundred ninety nine");
        assert_eq!(number_to_words(2_000_017), "two million seventeen");
        assert_eq!(digits_to_words("99999999999999999999999"), "nine ".repeat(23).trim_end());
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }
    }
}
