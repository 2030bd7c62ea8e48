//! ARPABET phone classes loaded from a versioned table.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::SpeechError;

const BUILTIN_TABLE: &str = include_str!("../../data/arpabet.tsv");
const VERSION_PREFIX: &str = "# phone-table version ";
pub const PHONE_TABLE_VERSION: u32 = 1;

/// Heatmap rows, ordered by increasing sonority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manner {
    Stop,
    Affricate,
    Fricative,
    Nasal,
    Lateral,
    Approximant,
}

/// Heatmap columns, front to back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Bilabial,
    Labiodental,
    Dental,
    Alveolar,
    Postalveolar,
    Palatal,
    Velar,
    LabialVelar,
    Glottal,
}

impl Manner {
    pub fn as_str(self) -> &'static str {
        match self {
            Manner::Stop => "stop",
            Manner::Affricate => "affricate",
            Manner::Fricative => "fricative",
            Manner::Nasal => "nasal",
            Manner::Lateral => "lateral",
            Manner::Approximant => "approximant",
        }
    }
}

impl Place {
    pub fn as_str(self) -> &'static str {
        match self {
            Place::Bilabial => "bilabial",
            Place::Labiodental => "labiodental",
            Place::Dental => "dental",
            Place::Alveolar => "alveolar",
            Place::Postalveolar => "postalveolar",
            Place::Palatal => "palatal",
            Place::Velar => "velar",
            Place::LabialVelar => "labial_velar",
            Place::Glottal => "glottal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneClass {
    pub label: String,
    pub is_vowel: bool,
    /// `None` for vowels.
    pub manner: Option<Manner>,
    pub place: Option<Place>,
    pub voiced: bool,
    pub sonority_rank: u8,
}

#[derive(Debug, Deserialize)]
struct Row {
    label: String,
    is_vowel: bool,
    manner: String,
    place: String,
    voiced: bool,
    sonority_rank: u8,
}

fn optional<T: for<'de> Deserialize<'de>>(field: &str) -> Result<Option<T>, SpeechError> {
    if field == "-" {
        return Ok(None);
    }
    serde_json::from_value(serde_json::Value::String(field.into()))
        .map(Some)
        .map_err(|_| SpeechError::TableFormat(format!("unknown category {field:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTable {
    pub version: u32,
    classes: BTreeMap<String, PhoneClass>,
}

impl PhoneTable {
    pub fn parse(text: &str) -> Result<Self, SpeechError> {
        let version = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix(VERSION_PREFIX))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| SpeechError::TableFormat("missing version header".into()))?;
        if version != PHONE_TABLE_VERSION {
            return Err(SpeechError::TableFormat(format!("unsupported version {version}")));
        }
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut classes = BTreeMap::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| SpeechError::TableFormat(e.to_string()))?;
            let class = PhoneClass {
                manner: optional(&row.manner)?,
                place: optional(&row.place)?,
                label: row.label.clone(),
                is_vowel: row.is_vowel,
                voiced: row.voiced,
                sonority_rank: row.sonority_rank,
            };
            if class.is_vowel != class.manner.is_none() || class.manner.is_none() != class.place.is_none() {
                return Err(SpeechError::TableFormat(format!("{}: vowels have no manner or place, consonants have both", row.label)));
            }
            if classes.insert(row.label.clone(), class).is_some() {
                return Err(SpeechError::TableFormat(format!("duplicate label {}", row.label)));
            }
        }
        Ok(Self { version, classes })
    }

    pub fn builtin() -> &'static PhoneTable {
        static TABLE: OnceLock<PhoneTable> = OnceLock::new();
        TABLE.get_or_init(|| PhoneTable::parse(BUILTIN_TABLE).expect("bundled phone table is valid"))
    }

    /// Looks up a label after stripping stress digits.
    pub fn classify(&self, label: &str) -> Result<&PhoneClass, SpeechError> {
        let base = label.trim_end_matches(|c: char| c.is_ascii_digit());
        self.classes
            .get(&base.to_ascii_uppercase())
            .ok_or_else(|| SpeechError::UnknownPhoneLabel(label.to_string()))
    }

    pub fn classes(&self) -> impl Iterator<Item = &PhoneClass> {
        self.classes.values()
    }
}

pub fn classify_phone(label: &str) -> Result<PhoneClass, SpeechError> {
    PhoneTable::builtin().classify(label).cloned()
}

/// Empty intervals and the aligner's silence/noise markers.
pub fn is_silence(label: &str) -> bool {
    matches!(label.trim().to_ascii_lowercase().as_str(), "" | "sil" | "sp" | "spn")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!(classify_phone("AH1").unwrap().is_vowel);
        let b = classify_phone("B").unwrap();
        assert_eq!((b.is_vowel, b.manner, b.place, b.voiced), (false, Some(Manner::Stop), Some(Place::Bilabial), true));
        let th = classify_phone("TH").unwrap();
        assert_eq!((th.manner, th.place, th.voiced), (Some(Manner::Fricative), Some(Place::Dental), false));
        let dh = classify_phone("DH").unwrap();
        assert_eq!((dh.manner, dh.place, dh.voiced), (th.manner, th.place, true));
        assert_eq!(classify_phone("ZZ"), Err(SpeechError::UnknownPhoneLabel("ZZ".into())));
    }

    #[test]
    fn voicing_pairs_share_manner_and_place() {
        for (unvoiced, voiced) in [("P", "B"), ("T", "D"), ("F", "V"), ("TH", "DH"), ("SH", "ZH"), ("CH", "JH"), ("K", "G"), ("S", "Z")] {
            let u = classify_phone(unvoiced).unwrap();
            let v = classify_phone(voiced).unwrap();
            assert_eq!((u.manner, u.place), (v.manner, v.place), "{unvoiced}/{voiced}");
            assert!(!u.voiced && v.voiced, "{unvoiced}/{voiced}");
        }
    }

    #[test]
    fn table_covers_the_inventory() {
        let t = PhoneTable::builtin();
        assert_eq!(t.version, 1);
        assert_eq!(t.classes().count(), 39);
        assert_eq!(t.classes().filter(|c| c.is_vowel).count(), 15);
        for c in t.classes() {
            assert_eq!(c.is_vowel, c.manner.is_none());
            if c.is_vowel {
                assert!(t.classes().filter(|k| !k.is_vowel).all(|k| k.sonority_rank < c.sonority_rank));
            }
        }
        for stressed in ["AA0", "IY2", "er1"] {
            assert!(classify_phone(stressed).unwrap().is_vowel);
        }
        assert!(is_silence("") && is_silence("sil") && is_silence("SP") && !is_silence("S"));
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(PhoneTable::parse("label\tis_vowel\n").is_err());
        let bad = "# phone-table version 1\nlabel\tis_vowel\tmanner\tplace\tvoiced\tsonority_rank\nAA\ttrue\tstop\t-\ttrue\t7\n";
        assert!(matches!(PhoneTable::parse(bad), Err(SpeechError::TableFormat(_))));
        let unknown = "# phone-table version 1\nlabel\tis_vowel\tmanner\tplace\tvoiced\tsonority_rank\nX\tfalse\tclick\tvelar\ttrue\t1\n";
        assert!(matches!(PhoneTable::parse(unknown), Err(SpeechError::TableFormat(_))));
    }
}
