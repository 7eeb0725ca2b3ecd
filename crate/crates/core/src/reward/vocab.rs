use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Annotation channel. The order `Attribute, Emotion, Action` is the order of
/// the three reward weights everywhere in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Attribute,
    Emotion,
    Action,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Attribute, Channel::Emotion, Channel::Action];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Attribute => "attr",
            Channel::Emotion => "emo",
            Channel::Action => "act",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s {
            "attr" | "attribute" | "appearance" => Some(Channel::Attribute),
            "emo" | "emotion" => Some(Channel::Emotion),
            "act" | "action" => Some(Channel::Action),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// Token names and dataset occurrence counts of the 103-attribute label space.
const APPEARANCE: [(&str, u32); 48] = [
    ("blurry", 610),
    ("male", 38434),
    ("young", 15252),
    ("chubby", 4880),
    ("pale_skin", 2440),
    ("rosy_cheeks", 11591),
    ("oval_face", 3660),
    ("receding_hairline", 7321),
    ("bald", 1830),
    ("bangs", 6711),
    ("black_hair", 16472),
    ("blond_hair", 9761),
    ("gray_hair", 7626),
    ("brown_hair", 20742),
    ("straight_hair", 9151),
    ("wavy_hair", 12201),
    ("long_hair", 13422),
    ("arched_eyebrows", 20742),
    ("bushy_eyebrows", 10371),
    ("bags_under_eyes", 5491),
    ("eyeglasses", 6467),
    ("sunglasses", 1834),
    ("narrow_eyes", 1220),
    ("big_nose", 14621),
    ("pointy_nose", 28674),
    ("high_cheekbones", 3672),
    ("big_lips", 2928),
    ("double_chin", 2671),
    ("no_beard", 35994),
    ("5_o'clock_shadow", 7981),
    ("goatee", 976),
    ("sideburns", 10981),
    ("mustache", 2478),
    ("heavy_makeup", 8541),
    ("wearing_earrings", 8976),
    ("wearing_hat", 4271),
    ("wearing_lipstick", 8663),
    ("wearing_necklace", 3663),
    ("wearing_necktie", 3512),
    ("wearing_mask", 1021),
    ("facial_tattoos", 244),
    ("facial_hair", 126),
    ("clean_shaven", 421),
    ("stubbly", 17784),
    ("shaved_head", 276),
    ("crew_cut", 7123),
    ("mullet", 62),
    ("bald_spot", 42),
];

const ACTION: [(&str, u32); 45] = [
    ("blow", 1961),
    ("chew", 1891),
    ("close_eyes", 2441),
    ("cough", 51),
    ("cry", 692),
    ("drink", 1161),
    ("eat", 1432),
    ("frown", 9761),
    ("gaze", 9151),
    ("glare", 3678),
    ("head_wagging", 13421),
    ("kiss", 918),
    ("laugh", 2189),
    ("listen_to_music", 1513),
    ("look_around", 7688),
    ("make_a_face", 107),
    ("nod", 8907),
    ("play_instrument", 102),
    ("read", 811),
    ("shake_head", 7931),
    ("shout", 2032),
    ("sign", 1712),
    ("sing", 2001),
    ("sleep", 599),
    ("smile", 15241),
    ("smoke", 1271),
    ("sneeze", 22),
    ("sneer", 1621),
    ("sniff", 2318),
    ("talk", 46775),
    ("turn", 10981),
    ("weep", 2271),
    ("whisper", 2121),
    ("wink", 2098),
    ("yawn", 92),
    ("blush", 6421),
    ("grin", 8724),
    ("grimace", 102),
    ("scrunch", 812),
    ("squint", 92),
    ("stare", 651),
    ("smirk", 61),
    ("sigh", 118),
    ("pout", 141),
    ("wince", 271),
];

const EMOTION: [(&str, u32); 10] = [
    ("happy", 10798),
    ("sad", 4472),
    ("surprise", 726),
    ("neutral", 39869),
    ("anger", 3629),
    ("contempt", 469),
    ("disgust", 1403),
    ("fear", 836),
    ("shame", 31),
    ("confusion", 36),
];

/// Ordered token lists per channel, with optional occurrence counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: [Vec<String>; 3],
    counts: [Vec<u32>; 3],
}

impl Vocabulary {
    /// Builds a vocabulary, rejecting duplicate tokens within a channel.
    pub fn new(tokens: [Vec<String>; 3], counts: Option<[Vec<u32>; 3]>) -> Result<Self> {
        for c in Channel::ALL {
            let list = &tokens[c.index()];
            let mut seen = BTreeSet::new();
            for t in list {
                if !seen.insert(t.as_str()) {
                    return Err(Error::Contract(format!(
                        "duplicate token `{t}` in channel {c}"
                    )));
                }
            }
        }
        let counts = match counts {
            Some(c) => {
                for ch in Channel::ALL {
                    if c[ch.index()].len() != tokens[ch.index()].len() {
                        return Err(Error::Contract(format!("count list length for {ch}")));
                    }
                }
                c
            }
            None => [
                vec![1; tokens[0].len()],
                vec![1; tokens[1].len()],
                vec![1; tokens[2].len()],
            ],
        };
        Ok(Self { tokens, counts })
    }

    /// The full 103-token label space: 48 appearance, 10 emotion, 45 action.
    pub fn full() -> Self {
        fn split<const N: usize>(xs: &[(&str, u32); N]) -> (Vec<String>, Vec<u32>) {
            xs.iter().map(|&(t, c)| (t.to_string(), c)).unzip()
        }
        let (a, ac) = split(&APPEARANCE);
        let (e, ec) = split(&EMOTION);
        let (x, xc) = split(&ACTION);
        Self {
            tokens: [a, e, x],
            counts: [ac, ec, xc],
        }
    }

    /// The first `per_channel` tokens of each channel of [`Vocabulary::full`].
    pub fn trimmed(per_channel: usize) -> Self {
        let full = Self::full();
        let take = |c: Channel| {
            let n = per_channel.min(full.tokens[c.index()].len());
            (
                full.tokens[c.index()][..n].to_vec(),
                full.counts[c.index()][..n].to_vec(),
            )
        };
        let (a, ac) = take(Channel::Attribute);
        let (e, ec) = take(Channel::Emotion);
        let (x, xc) = take(Channel::Action);
        Self {
            tokens: [a, e, x],
            counts: [ac, ec, xc],
        }
    }

    pub fn tokens(&self, c: Channel) -> &[String] {
        &self.tokens[c.index()]
    }

    pub fn counts(&self, c: Channel) -> &[u32] {
        &self.counts[c.index()]
    }

    pub fn len(&self, c: Channel) -> usize {
        self.tokens[c.index()].len()
    }

    pub fn total(&self) -> usize {
        Channel::ALL.iter().map(|&c| self.len(c)).sum()
    }

    /// Offset of `c`'s first token when all channels are laid end to end.
    pub fn offset(&self, c: Channel) -> usize {
        Channel::ALL[..c.index()].iter().map(|&k| self.len(k)).sum()
    }

    pub fn index(&self, c: Channel, token: &str) -> Result<usize> {
        self.tokens[c.index()]
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::UnknownToken {
                channel: c.to_string(),
                token: token.to_string(),
            })
    }

    pub fn name(&self, c: Channel, idx: usize) -> Option<&str> {
        self.tokens[c.index()].get(idx).map(String::as_str)
    }

    pub fn parse_set<S: AsRef<str>>(&self, c: Channel, tokens: &[S]) -> Result<BTreeSet<usize>> {
        tokens.iter().map(|t| self.index(c, t.as_ref())).collect()
    }

    /// Line-delimited `channel<TAB>token`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for c in Channel::ALL {
            for t in self.tokens(c) {
                s.push_str(&format!("{c}\t{t}\n"));
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens: [Vec<String>; 3] = Default::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ch, tok) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `channel<TAB>token`".into(),
            })?;
            let c = Channel::parse(ch).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("unknown channel `{ch}`"),
            })?;
            if tok.is_empty() || tok.contains('\t') {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "malformed token".into(),
                });
            }
            tokens[c.index()].push(tok.to_string());
        }
        Self::new(tokens, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_vocabulary_sizes() {
        let v = Vocabulary::full();
        assert_eq!(v.len(Channel::Attribute), 48);
        assert_eq!(v.len(Channel::Action), 45);
        assert_eq!(v.len(Channel::Emotion), 10);
        assert_eq!(v.total(), 103);
        let mut all: Vec<&str> = Channel::ALL
            .iter()
            .flat_map(|&c| v.tokens(c).iter().map(String::as_str))
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 103);
        assert_eq!(v.counts(Channel::Attribute)[1], 38434);
    }

    #[test]
    fn tsv_roundtrip_and_errors() {
        let v = Vocabulary::trimmed(8);
        assert_eq!(v.total(), 24);
        assert_eq!(Vocabulary::from_tsv(&v.to_tsv()).unwrap().tokens, v.tokens);
        assert!(Vocabulary::from_tsv("attr\tsmile\nattr\tsmile\n").is_err());
        assert!(matches!(
            Vocabulary::from_tsv("colour\tred\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_token_is_named() {
        let v = Vocabulary::full();
        let err = v.index(Channel::Emotion, "smile").unwrap_err();
        assert!(err.to_string().contains("smile"));
    }
}
