//! Case records and modality bookkeeping.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Feature width of one radiology slice descriptor.
pub const RADIOLOGY_DIM: usize = 256;
/// Feature width of one pathology patch descriptor.
pub const PATHOLOGY_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Clinical,
    Radiology,
    Pathology,
    Genomic,
}

impl Modality {
    /// Canonical order; fused features and subsets follow it.
    pub const ALL: [Modality; 4] = [
        Modality::Clinical,
        Modality::Radiology,
        Modality::Pathology,
        Modality::Genomic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Modality::Clinical => 'C',
            Modality::Radiology => 'R',
            Modality::Pathology => 'P',
            Modality::Genomic => 'G',
        }
    }

    pub fn from_code(c: char) -> Option<Modality> {
        match c.to_ascii_uppercase() {
            'C' => Some(Modality::Clinical),
            'R' => Some(Modality::Radiology),
            'P' => Some(Modality::Pathology),
            'G' => Some(Modality::Genomic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Clinical => "clinical",
            Modality::Radiology => "radiology",
            Modality::Pathology => "pathology",
            Modality::Genomic => "genomic",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Four-bit availability mask over C, R, P, G.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Availability(u8);

impl Availability {
    pub const fn empty() -> Self {
        Availability(0)
    }

    pub const fn all() -> Self {
        Availability(0b1111)
    }

    pub fn from_bits(bits: u8) -> Self {
        Availability(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn only(m: Modality) -> Self {
        Availability(1 << m.index())
    }

    pub fn from_modalities(ms: impl IntoIterator<Item = Modality>) -> Self {
        ms.into_iter().fold(Self::empty(), Self::with)
    }

    pub fn with(self, m: Modality) -> Self {
        Availability(self.0 | (1 << m.index()))
    }

    pub fn without(self, m: Modality) -> Self {
        Availability(self.0 & !(1 << m.index()))
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersect(self, other: Self) -> Self {
        Availability(self.0 & other.0)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    /// Parses letter codes such as `"CRG"`.
    pub fn parse(codes: &str) -> Result<Self> {
        let mut out = Self::empty();
        for c in codes.chars() {
            let m = Modality::from_code(c)
                .ok_or_else(|| Error::arg(alloc::format!("unknown modality code `{c}`")))?;
            out = out.with(m);
        }
        Ok(out)
    }
}

impl fmt::Display for Availability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.iter() {
            write!(f, "{}", m.code())?;
        }
        Ok(())
    }
}

/// Right-censored survival outcome. `censored == true` means follow-up ended
/// without an observed event (c = 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalLabel {
    pub censored: bool,
    pub time: f64,
    pub bin: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    /// 1 = good responder, 0 = non-responder.
    Response(u8),
    Survival(SurvivalLabel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub id: String,
    pub features: Vec<f64>,
}

/// One patient's raw inputs. A modality is available exactly when its field
/// is non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub clinical: Vec<(String, f64)>,
    /// Axially ordered slice descriptors, `RADIOLOGY_DIM` wide.
    pub radiology: Vec<Vec<f64>>,
    pub pathology: Vec<Patch>,
    pub genomic: Vec<(String, f64)>,
    pub label: Label,
}

impl CaseRecord {
    pub fn new(case_id: impl Into<String>, label: Label) -> Self {
        CaseRecord {
            case_id: case_id.into(),
            clinical: Vec::new(),
            radiology: Vec::new(),
            pathology: Vec::new(),
            genomic: Vec::new(),
            label,
        }
    }

    pub fn availability(&self) -> Availability {
        let mut a = Availability::empty();
        if !self.clinical.is_empty() {
            a = a.with(Modality::Clinical);
        }
        if !self.radiology.is_empty() {
            a = a.with(Modality::Radiology);
        }
        if !self.pathology.is_empty() {
            a = a.with(Modality::Pathology);
        }
        if !self.genomic.is_empty() {
            a = a.with(Modality::Genomic);
        }
        a
    }

    /// Copy with every modality outside `keep` physically removed.
    pub fn restricted_to(&self, keep: Availability) -> CaseRecord {
        let mut out = self.clone();
        if !keep.contains(Modality::Clinical) {
            out.clinical.clear();
        }
        if !keep.contains(Modality::Radiology) {
            out.radiology.clear();
        }
        if !keep.contains(Modality::Pathology) {
            out.pathology.clear();
        }
        if !keep.contains(Modality::Genomic) {
            out.genomic.clear();
        }
        out
    }

    /// Checks feature widths and per-case key uniqueness.
    pub fn validate(&self) -> Result<()> {
        for s in &self.radiology {
            if s.len() != RADIOLOGY_DIM {
                return Err(Error::mismatch("radiology slice", &[s.len()], &[RADIOLOGY_DIM]));
            }
        }
        for p in &self.pathology {
            if p.features.len() != PATHOLOGY_DIM {
                return Err(Error::mismatch(
                    "pathology patch",
                    &[p.features.len()],
                    &[PATHOLOGY_DIM],
                ));
            }
        }
        check_unique(self.clinical.iter().map(|(k, _)| k.as_str()))?;
        check_unique(self.genomic.iter().map(|(k, _)| k.as_str()))?;
        if let Label::Survival(s) = self.label {
            if !(s.time > 0.0) {
                return Err(Error::arg("survival time must be positive"));
            }
        }
        Ok(())
    }

    pub fn response_class(&self) -> Option<u8> {
        match self.label {
            Label::Response(c) => Some(c),
            Label::Survival(_) => None,
        }
    }

    pub fn survival(&self) -> Option<SurvivalLabel> {
        match self.label {
            Label::Survival(s) => Some(s),
            Label::Response(_) => None,
        }
    }
}

pub(crate) fn check_unique<'a>(keys: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen: Vec<&str> = keys.collect();
    seen.sort_unstable();
    for w in seen.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateKey(w[0].into()));
        }
    }
    Ok(())
}
