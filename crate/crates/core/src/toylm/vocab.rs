//! Character-level text vocabulary.

/// Ids 0..4 are `<pad>`, `<bos>`, `<eos>`, `<unk>`; the rest are the
/// configured characters in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    chars: Vec<char>,
}

impl Default for TextVocab {
    /// Printable ASCII.
    fn default() -> Self {
        Self::new((0x20u8..=0x7e).map(char::from))
    }
}

impl TextVocab {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const SPECIALS: [&'static str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

    /// Duplicate characters keep their first id.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut out: Vec<char> = Vec::new();
        for c in chars {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        Self { chars: out }
    }

    pub fn len(&self) -> usize {
        Self::SPECIALS.len() + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> u32 {
        self.chars
            .iter()
            .position(|&x| x == c)
            .map_or(Self::UNK, |i| (i + Self::SPECIALS.len()) as u32)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize).checked_sub(Self::SPECIALS.len()).and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Specials are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&i| self.char_of(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknowns() {
        let v = TextVocab::new("AB C".chars());
        assert_eq!(v.len(), 8);
        assert_eq!(v.encode("A C"), vec![4, 6, 7]);
        assert_eq!(v.encode("Z"), vec![TextVocab::UNK]);
        assert_eq!(v.decode(&[1, 4, 5, 2]), "AB");
        assert_eq!(TextVocab::default().len(), 99);
    }
}
