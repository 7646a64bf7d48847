//! Tokenization, sentence splitting and part-of-speech tagging used by the
//! linguistic metrics, the lexical projection and the similarity functions.
//!
//! Tokens are lowercased Unicode words; punctuation never counts as a token.
//! A sentence ends at `.`, `!` or `?` followed by whitespace or end of text.

use std::collections::HashMap;

use unicode_segmentation::UnicodeSegmentation;

pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match iter.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                out.push(&text[start..end]);
                start = end;
            }
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(&text[start..]);
    }
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

pub trait PosTagger: Send + Sync {
    /// Tag a single lowercased token. Unknown tokens map to `PosTag::Other`.
    fn tag(&self, token: &str) -> PosTag;

    /// Stable identifier recorded in every report the tagger contributes to.
    fn identity(&self) -> String;
}

const LEXICON_NOUNS: &[&str] = &[
    "food",
    "place",
    "service",
    "time",
    "staff",
    "people",
    "day",
    "night",
    "thing",
    "way",
    "restaurant",
    "cafe",
    "coffee",
    "bar",
    "menu",
    "price",
    "order",
    "table",
    "room",
    "hotel",
    "friend",
    "family",
    "home",
    "work",
    "city",
    "park",
    "gym",
    "shop",
    "store",
    "office",
    "school",
    "year",
    "week",
    "hour",
    "minute",
    "morning",
    "evening",
    "life",
    "world",
    "money",
    "car",
    "experience",
    "view",
    "question",
    "answer",
    "point",
    "idea",
    "opinion",
    "post",
    "comment",
    "reason",
    "problem",
    "man",
    "woman",
    "child",
    "kids",
    "water",
    "music",
    "book",
    "game",
    "team",
    "group",
    "community",
    "country",
    "government",
    "law",
    "rule",
    "art",
    "history",
    "culture",
    "nature",
    "health",
    "job",
    "business",
    "chicken",
    "pizza",
    "beer",
    "wine",
    "dinner",
    "lunch",
    "breakfast",
    "museum",
    "library",
    "church",
    "street",
    "market",
];

const LEXICON_VERBS: &[&str] = &[
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "am",
    "have",
    "has",
    "had",
    "do",
    "does",
    "did",
    "go",
    "goes",
    "went",
    "gone",
    "get",
    "got",
    "make",
    "made",
    "say",
    "said",
    "see",
    "saw",
    "seen",
    "know",
    "knew",
    "think",
    "thought",
    "take",
    "took",
    "come",
    "came",
    "want",
    "like",
    "love",
    "hate",
    "feel",
    "felt",
    "try",
    "tried",
    "eat",
    "ate",
    "drink",
    "drank",
    "visit",
    "stay",
    "stayed",
    "need",
    "give",
    "gave",
    "find",
    "found",
    "tell",
    "told",
    "ask",
    "work",
    "seem",
    "leave",
    "left",
    "call",
    "keep",
    "kept",
    "let",
    "begin",
    "began",
    "help",
    "show",
    "hear",
    "heard",
    "play",
    "run",
    "ran",
    "move",
    "live",
    "believe",
    "bring",
    "brought",
    "happen",
    "write",
    "wrote",
    "sit",
    "sat",
    "stand",
    "stood",
    "lose",
    "lost",
    "pay",
    "paid",
    "meet",
    "met",
    "learn",
    "change",
    "recommend",
    "agree",
    "disagree",
    "explain",
    "argue",
    "can",
    "will",
    "would",
    "should",
    "could",
    "must",
    "might",
    "may",
    "shall",
];

const LEXICON_ADJS: &[&str] = &[
    "good",
    "great",
    "bad",
    "nice",
    "best",
    "better",
    "worse",
    "worst",
    "new",
    "old",
    "big",
    "small",
    "little",
    "long",
    "short",
    "high",
    "low",
    "large",
    "young",
    "fresh",
    "hot",
    "cold",
    "friendly",
    "rude",
    "clean",
    "dirty",
    "cheap",
    "expensive",
    "tasty",
    "delicious",
    "amazing",
    "awesome",
    "terrible",
    "horrible",
    "awful",
    "excellent",
    "perfect",
    "happy",
    "sad",
    "busy",
    "quiet",
    "loud",
    "slow",
    "fast",
    "quick",
    "easy",
    "hard",
    "free",
    "full",
    "empty",
    "true",
    "false",
    "wrong",
    "right",
    "real",
    "sure",
    "important",
    "different",
    "same",
    "whole",
    "own",
    "other",
    "many",
    "few",
    "much",
    "more",
    "most",
    "less",
    "least",
    "such",
    "fine",
    "calm",
    "safe",
    "strong",
    "weak",
    "kind",
    "fair",
    "average",
    "okay",
    "ok",
    "decent",
];

const LEXICON_ADVS: &[&str] = &[
    "very",
    "really",
    "too",
    "so",
    "just",
    "also",
    "not",
    "never",
    "always",
    "often",
    "sometimes",
    "usually",
    "again",
    "still",
    "already",
    "soon",
    "here",
    "there",
    "now",
    "then",
    "today",
    "tomorrow",
    "yesterday",
    "even",
    "quite",
    "rather",
    "almost",
    "maybe",
    "perhaps",
    "well",
    "only",
    "definitely",
    "probably",
    "actually",
    "basically",
    "honestly",
    "pretty",
    "ever",
    "once",
    "twice",
    "away",
    "back",
    "later",
    "instead",
    "anyway",
];

/// Deterministic lexicon plus suffix-rule tagger over {Noun, Verb, Adj, Adv, Other}.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: HashMap<&'static str, PosTag>,
}

impl Default for LexiconTagger {
    fn default() -> Self {
        let mut lexicon = HashMap::new();
        // Insertion order sets precedence for words listed twice: later wins.
        for (words, tag) in [
            (LEXICON_NOUNS, PosTag::Noun),
            (LEXICON_ADJS, PosTag::Adj),
            (LEXICON_ADVS, PosTag::Adv),
            (LEXICON_VERBS, PosTag::Verb),
        ] {
            for w in words {
                lexicon.insert(*w, tag);
            }
        }
        LexiconTagger { lexicon }
    }
}

const ADV_SUFFIXES: &[&str] = &["ly"];
const ADJ_SUFFIXES: &[&str] = &[
    "ous", "ful", "ive", "able", "ible", "less", "ish", "ical", "ic", "al", "est", "y",
];
const VERB_SUFFIXES: &[&str] = &["ing", "ed", "ize", "ise", "ify", "ate", "en"];
const NOUN_SUFFIXES: &[&str] = &[
    "tion", "sion", "ment", "ness", "ity", "ism", "ship", "ance", "ence", "er", "or", "ist", "hood", "dom", "s",
];

impl PosTagger for LexiconTagger {
    fn tag(&self, token: &str) -> PosTag {
        if let Some(tag) = self.lexicon.get(token) {
            return *tag;
        }
        if token.chars().count() < 4 || !token.chars().all(char::is_alphabetic) {
            return PosTag::Other;
        }
        let rules: [(&[&str], PosTag); 4] = [
            (ADV_SUFFIXES, PosTag::Adv),
            (NOUN_SUFFIXES, PosTag::Noun),
            (VERB_SUFFIXES, PosTag::Verb),
            (ADJ_SUFFIXES, PosTag::Adj),
        ];
        // Longest matching suffix wins; ties resolved by rule order above.
        let mut best: Option<(usize, PosTag)> = None;
        for (suffixes, tag) in rules {
            for s in suffixes {
                if token.ends_with(s) && best.is_none_or(|(len, _)| s.len() > len) {
                    best = Some((s.len(), tag));
                }
            }
        }
        best.map(|(_, t)| t).unwrap_or(PosTag::Other)
    }

    fn identity(&self) -> String {
        "lexicon-suffix-v1".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_drops_punctuation_and_lowercases() {
        assert_eq!(tokenize("A b."), vec!["a", "b"]);
        assert_eq!(
            tokenize("Hello, World!  It's 5 o'clock."),
            vec!["hello", "world", "it's", "5", "o'clock"]
        );
        assert!(tokenize("... !!").is_empty());
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("One two. Three! Four?"),
            vec!["One two.", " Three!", " Four?"]
        );
        assert_eq!(split_sentences("Pi is 3.14 today"), vec!["Pi is 3.14 today"]);
        assert_eq!(split_sentences("No terminal"), vec!["No terminal"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn tagger_lexicon_and_suffixes() {
        let t = LexiconTagger::default();
        assert_eq!(t.tag("food"), PosTag::Noun);
        assert_eq!(t.tag("went"), PosTag::Verb);
        assert_eq!(t.tag("great"), PosTag::Adj);
        assert_eq!(t.tag("very"), PosTag::Adv);
        assert_eq!(t.tag("quickly"), PosTag::Adv);
        assert_eq!(t.tag("happiness"), PosTag::Noun);
        assert_eq!(t.tag("walking"), PosTag::Verb);
        assert_eq!(t.tag("wonderful"), PosTag::Adj);
        assert_eq!(t.tag("the"), PosTag::Other);
        assert_eq!(t.tag("42"), PosTag::Other);
        assert_eq!(t.identity(), "lexicon-suffix-v1");
    }
}
