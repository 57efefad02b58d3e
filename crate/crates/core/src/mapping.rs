//! Binding of getter commands to PID field positions.
//!
//! Mapping files hold one `GETTER=PID-<index>` line per getter; blank lines
//! and `#` comments are ignored. Every getter must appear exactly once.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Patient attributes readable through getter commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Getter {
    ExternalId,
    InternalId,
    AlternateId,
    Name,
    MotherMaidenName,
    DateOfBirth,
    Sex,
    Race,
    Address,
    CountryCode,
    HomePhone,
    BusinessPhone,
    PrimaryLanguage,
    MaritalStatus,
    Religion,
    AccountNumber,
    Cnp,
    DriversLicense,
    EthnicGroup,
    BirthPlace,
    Citizenship,
    Nationality,
}

impl Getter {
    pub const ALL: [Getter; 22] = [
        Getter::ExternalId,
        Getter::InternalId,
        Getter::AlternateId,
        Getter::Name,
        Getter::MotherMaidenName,
        Getter::DateOfBirth,
        Getter::Sex,
        Getter::Race,
        Getter::Address,
        Getter::CountryCode,
        Getter::HomePhone,
        Getter::BusinessPhone,
        Getter::PrimaryLanguage,
        Getter::MaritalStatus,
        Getter::Religion,
        Getter::AccountNumber,
        Getter::Cnp,
        Getter::DriversLicense,
        Getter::EthnicGroup,
        Getter::BirthPlace,
        Getter::Citizenship,
        Getter::Nationality,
    ];

    /// Identifier used in mapping files.
    pub fn canonical(self) -> &'static str {
        self.names().0
    }

    /// Romanian command alias.
    pub fn romanian(self) -> &'static str {
        self.names().1
    }

    /// English command alias.
    pub fn english(self) -> &'static str {
        self.names().2
    }

    fn names(self) -> (&'static str, &'static str, &'static str) {
        use Getter::*;
        match self {
            ExternalId => ("EXTERNAL_ID", "idExternPacient", "getExternalID"),
            InternalId => ("INTERNAL_ID", "idInternPacient", "getInternalID"),
            AlternateId => ("ALTERNATE_ID", "idAlternativPacient", "getAlternateID"),
            Name => ("NAME", "nume", "getName"),
            MotherMaidenName => ("MOTHER_MAIDEN_NAME", "numeFataMama", "getMotherMaidenName"),
            DateOfBirth => ("DATE_OF_BIRTH", "dataNasterii", "getDateOfBirth"),
            Sex => ("SEX", "sex", "getSex"),
            Race => ("RACE", "rasa", "getRace"),
            Address => ("ADDRESS", "adresa", "getAddress"),
            CountryCode => ("COUNTRY_CODE", "codulTarii", "getCountryCode"),
            HomePhone => ("HOME_PHONE", "numarTelefon", "getHomePhoneNumber"),
            BusinessPhone => (
                "BUSINESS_PHONE",
                "numarTelefonServicii",
                "getBusinessPhoneNumber",
            ),
            PrimaryLanguage => ("PRIMARY_LANGUAGE", "limbaNatala", "getPrimaryLanguage"),
            MaritalStatus => ("MARITAL_STATUS", "stareCivila", "getMaritalStatus"),
            Religion => ("RELIGION", "religie", "getReligion"),
            AccountNumber => ("ACCOUNT_NUMBER", "numarContBancar", "getAccountNumber"),
            Cnp => ("CNP", "codNumericPersonal", "getCNP"),
            DriversLicense => (
                "DRIVERS_LICENSE",
                "serieCarteIdentitate",
                "getDriversLicenseNumber",
            ),
            EthnicGroup => ("ETHNIC_GROUP", "minoritateaEtnica", "getEthnicGroup"),
            BirthPlace => ("BIRTH_PLACE", "loculNasterii", "getBirthPlace"),
            Citizenship => ("CITIZENSHIP", "cetatenie", "getCitizenship"),
            Nationality => ("NATIONALITY", "nationalitate", "getNationality"),
        }
    }
}

impl fmt::Display for Getter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

impl FromStr for Getter {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Getter::ALL
            .into_iter()
            .find(|g| g.canonical() == s)
            .ok_or(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("no entry for {0}")]
    Missing(Getter),
    #[error("cannot read mapping file {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Getter to PID field index. Total over [`Getter::ALL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMapping {
    entries: BTreeMap<Getter, usize>,
}

const STANDARD: &str = include_str!("../mappings/standard.map");
const SIMOPAC: &str = include_str!("../mappings/simopac.map");

impl FieldMapping {
    /// HL7 v2.3.1 PID positions.
    pub fn standard() -> Self {
        Self::parse(STANDARD).expect("built-in standard mapping")
    }

    /// Positions observed on the SIMOPAC server (name at PID-4, CNP at PID-17).
    pub fn simopac() -> Self {
        Self::parse(SIMOPAC).expect("built-in simopac mapping")
    }

    /// `standard`, `simopac`, or a path to a mapping file.
    pub fn from_selector(selector: &str) -> Result<Self, MappingError> {
        match selector {
            "standard" => Ok(Self::standard()),
            "simopac" => Ok(Self::simopac()),
            path => Self::from_file(path),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, MappingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MappingError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, MappingError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: String| MappingError::BadLine {
                line: line_no,
                reason,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, target) = line
                .split_once('=')
                .ok_or_else(|| bad("expected GETTER=PID-<index>".into()))?;
            let getter: Getter = name
                .trim()
                .parse()
                .map_err(|_| bad(format!("unknown getter {:?}", name.trim())))?;
            let index = target
                .trim()
                .strip_prefix("PID-")
                .ok_or_else(|| bad(format!("{getter} must map to a PID field")))?
                .parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| bad(format!("bad field index in {:?}", target.trim())))?;
            if entries.insert(getter, index).is_some() {
                return Err(bad(format!("{getter} mapped twice")));
            }
        }
        if let Some(missing) = Getter::ALL.into_iter().find(|g| !entries.contains_key(g)) {
            return Err(MappingError::Missing(missing));
        }
        Ok(Self { entries })
    }

    /// PID field index for `getter`.
    pub fn index(&self, getter: Getter) -> usize {
        self.entries[&getter]
    }
}
