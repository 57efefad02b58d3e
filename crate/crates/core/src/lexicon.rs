//! File-based language packs.
//!
//! A languages directory holds `languages.txt` (one `Name (code)` per line)
//! and, per language code, these files:
//!
//! * `-files not found-.<code>`, `-none-.<code>`, `-not present-.<code>`:
//!   the three special strings. A language missing any of them is unavailable.
//! * `<SEG>.<code>` for each interpreted segment: `INDEX=Label` lines.
//! * `MSH-EventType.<code>`, `MSH-MessageType.<code>`: `CODE=Description` lines.
//!
//! In lexicon and code-table files, blank lines and lines starting with `#`
//! are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use indexmap::IndexMap;
use log::warn;
use thiserror::Error;

use crate::text::decode_bytes;

pub const LANGUAGES_FILE: &str = "languages.txt";

/// Segments with a per-language lexicon file.
pub const SEGMENT_FILES: [&str; 13] = [
    "EVN", "MRG", "MSA", "MSH", "OBR", "OBX", "ORC", "PID", "PV1", "QAK", "QPD", "RCP", "ZDS",
];

pub const MSH_EVENT_TYPE: &str = "MSH-EventType";
pub const MSH_MESSAGE_TYPE: &str = "MSH-MessageType";
pub const CODE_TABLE_FILES: [&str; 2] = [MSH_EVENT_TYPE, MSH_MESSAGE_TYPE];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{} not found in {}", LANGUAGES_FILE, .0.display())]
    RegistryMissing(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    FilesNotFound,
    None,
    NotPresent,
}

impl Special {
    pub const ALL: [Special; 3] = [Special::FilesNotFound, Special::None, Special::NotPresent];

    pub fn file_stem(self) -> &'static str {
        match self {
            Special::FilesNotFound => "-files not found-",
            Special::None => "-none-",
            Special::NotPresent => "-not present-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Specials {
    pub files_not_found: String,
    pub none: String,
    pub not_present: String,
}

/// Field labels of one segment, keyed by 1-based field index.
pub type SegmentLexicon = BTreeMap<usize, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguagePack {
    code: String,
    display_name: String,
    segments: BTreeMap<String, SegmentLexicon>,
    code_tables: BTreeMap<String, BTreeMap<String, String>>,
    specials: Specials,
}

impl LanguagePack {
    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn special(&self, kind: Special) -> &str {
        match kind {
            Special::FilesNotFound => &self.specials.files_not_found,
            Special::None => &self.specials.none,
            Special::NotPresent => &self.specials.not_present,
        }
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    pub fn lexicon(&self, segment: &str) -> Option<&SegmentLexicon> {
        self.segments.get(segment)
    }

    pub fn label(&self, segment: &str, index: usize) -> Option<&str> {
        self.segments.get(segment)?.get(&index).map(String::as_str)
    }

    /// Case-sensitive lookup in a code table.
    pub fn code_lookup(&self, table: &str, code: &str) -> Option<&str> {
        self.code_tables.get(table)?.get(code).map(String::as_str)
    }

    fn load(dir: &Path, code: &str, display_name: &str) -> Result<Self, String> {
        let mut specials = Vec::with_capacity(3);
        for kind in Special::ALL {
            let name = format!("{}.{code}", kind.file_stem());
            let text = match read_optional(&dir.join(&name)) {
                Ok(Some(text)) => text,
                Ok(None) => return Err(format!("missing {name:?}")),
                Err(e) => return Err(e.to_string()),
            };
            let value = clean_special(&text);
            if value.is_empty() {
                return Err(format!("{name:?} is empty"));
            }
            specials.push(value);
        }
        let [files_not_found, none, not_present]: [String; 3] =
            specials.try_into().expect("three specials");

        let mut segments = BTreeMap::new();
        for seg in SEGMENT_FILES {
            let path = dir.join(format!("{seg}.{code}"));
            if let Some(text) = read_optional(&path).map_err(|e| e.to_string())? {
                segments.insert(seg.to_string(), parse_lexicon(&text, &path));
            }
        }
        let mut code_tables = BTreeMap::new();
        for table in CODE_TABLE_FILES {
            let path = dir.join(format!("{table}.{code}"));
            if let Some(text) = read_optional(&path).map_err(|e| e.to_string())? {
                code_tables.insert(table.to_string(), parse_code_table(&text, &path));
            }
        }
        Ok(Self {
            code: code.to_string(),
            display_name: display_name.to_string(),
            segments,
            code_tables,
            specials: Specials {
                files_not_found,
                none,
                not_present,
            },
        })
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, LexiconError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(decode_bytes(&bytes).into_owned())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(LexiconError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn clean_special(text: &str) -> String {
    text.trim_start_matches('\u{feff}')
        .trim_end_matches(['\r', '\n'])
        .to_string()
}

/// `(line number, key, value)` for every `KEY=VALUE` line.
fn entries<'a>(text: &'a str, path: &'a Path) -> impl Iterator<Item = (usize, &'a str, &'a str)> {
    text.trim_start_matches('\u{feff}')
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            match line.split_once('=') {
                Some((k, v)) => Some((i + 1, k.trim(), v.trim())),
                None => {
                    warn!("{}:{}: expected KEY=VALUE, skipped", path.display(), i + 1);
                    None
                }
            }
        })
}

fn parse_lexicon(text: &str, path: &Path) -> SegmentLexicon {
    let mut out = SegmentLexicon::new();
    for (line, key, label) in entries(text, path) {
        let index = match key.parse::<usize>() {
            Ok(i) if i >= 1 => i,
            _ => {
                warn!(
                    "{}:{line}: bad field index {key:?}, skipped",
                    path.display()
                );
                continue;
            }
        };
        if label.is_empty() {
            warn!("{}:{line}: empty label, skipped", path.display());
            continue;
        }
        if out.insert(index, label.to_string()).is_some() {
            warn!(
                "{}:{line}: duplicate index {index}, last one wins",
                path.display()
            );
        }
    }
    out
}

fn parse_code_table(text: &str, path: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (line, code, desc) in entries(text, path) {
        if code.is_empty() || desc.is_empty() {
            warn!(
                "{}:{line}: empty code or description, skipped",
                path.display()
            );
            continue;
        }
        if out.insert(code.to_string(), desc.to_string()).is_some() {
            warn!(
                "{}:{line}: duplicate code {code}, last one wins",
                path.display()
            );
        }
    }
    out
}

/// Parses one `languages.txt` line: `NAME (CODE)`, NAME may contain spaces.
pub fn parse_language_line(line: &str) -> Option<(&str, &str)> {
    let line = line.trim_end();
    let inner = line.strip_suffix(')')?;
    let open = inner.rfind(" (")?;
    let name = inner[..open].trim();
    let code = &inner[open + 2..];
    let code_ok = !code.is_empty()
        && code
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    (!name.is_empty() && code_ok).then_some((name, code))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnavailablePack {
    pub code: String,
    pub reason: String,
}

/// All packs listed in one languages directory, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageRegistry {
    source_dir: PathBuf,
    packs: IndexMap<String, LanguagePack>,
    unavailable: Vec<UnavailablePack>,
}

impl LanguageRegistry {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let dir = dir.as_ref();
        let list = match read_optional(&dir.join(LANGUAGES_FILE))? {
            Some(text) => text,
            None => return Err(LexiconError::RegistryMissing(dir.to_path_buf())),
        };
        let mut packs = IndexMap::new();
        let mut unavailable = Vec::new();
        for (i, raw) in list.trim_start_matches('\u{feff}').lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let Some((name, code)) = parse_language_line(raw) else {
                warn!(
                    "{}:{}: not of the form `Name (code)`, skipped",
                    LANGUAGES_FILE,
                    i + 1
                );
                continue;
            };
            if packs.contains_key(code)
                || unavailable.iter().any(|u: &UnavailablePack| u.code == code)
            {
                warn!(
                    "{}:{}: duplicate language code {code}, skipped",
                    LANGUAGES_FILE,
                    i + 1
                );
                continue;
            }
            match LanguagePack::load(dir, code, name) {
                Ok(pack) => {
                    packs.insert(code.to_string(), pack);
                }
                Err(reason) => {
                    warn!("language {code} unavailable: {reason}");
                    unavailable.push(UnavailablePack {
                        code: code.to_string(),
                        reason,
                    });
                }
            }
        }
        Ok(Self {
            source_dir: dir.to_path_buf(),
            packs,
            unavailable,
        })
    }

    /// Loads a fresh registry from the same directory.
    pub fn reload(&self) -> Result<Self, LexiconError> {
        Self::load(&self.source_dir)
    }

    pub fn source_dir(&self) -> &Path {
        &self.source_dir
    }

    pub fn get(&self, code: &str) -> Option<&LanguagePack> {
        self.packs.get(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.packs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.packs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packs.is_empty()
    }

    pub fn unavailable(&self) -> &[UnavailablePack] {
        &self.unavailable
    }

    /// `en` when loaded, otherwise the first listed language.
    pub fn default_pack(&self) -> Option<&LanguagePack> {
        self.packs.get("en").or_else(|| self.packs.values().next())
    }
}

/// Shared, atomically swappable registry snapshot.
#[derive(Debug, Clone)]
pub struct RegistryHandle {
    current: Arc<ArcSwap<LanguageRegistry>>,
}

impl RegistryHandle {
    pub fn new(registry: LanguageRegistry) -> Self {
        Self {
            current: Arc::new(ArcSwap::from_pointee(registry)),
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LexiconError> {
        LanguageRegistry::load(dir).map(Self::new)
    }

    pub fn snapshot(&self) -> Arc<LanguageRegistry> {
        self.current.load_full()
    }

    /// Re-reads the directory and swaps the new snapshot in. On failure the
    /// previous snapshot stays active.
    pub fn reload(&self) -> Result<Arc<LanguageRegistry>, LexiconError> {
        let old = self.current.load_full();
        match old.reload() {
            Ok(fresh) => {
                let fresh = Arc::new(fresh);
                self.current.store(fresh.clone());
                Ok(fresh)
            }
            Err(e) => {
                warn!("language reload failed, keeping previous packs: {e}");
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &Path, name: &str, contents: &str) {
        fs::write(dir.join(name), contents).unwrap();
    }

    fn specials(dir: &Path, code: &str, [fnf, none, np]: [&str; 3]) {
        write(dir, &format!("-files not found-.{code}"), fnf);
        write(dir, &format!("-none-.{code}"), none);
        write(dir, &format!("-not present-.{code}"), np);
    }

    fn two_language_dir() -> TempDir {
        let tmp = TempDir::new().unwrap();
        let d = tmp.path();
        write(d, LANGUAGES_FILE, "Romana (ro)\nEnglish (en)\n");
        specials(
            d,
            "ro",
            ["Fisiere HL7 negasite!", "Niciunul", "Nu exista date.\n"],
        );
        specials(d, "en", ["HL7 files not found!", "None\r\n", "Not present"]);
        write(
            d,
            "PID.ro",
            "# comment\n\n4=Nume\n17=Cod numeric personal\n",
        );
        write(d, "PID.en", "4=Name\n17=Personal numeric code\n");
        write(d, "MSH-MessageType.en", "ADT=Admit/Discharge/Transfer\n");
        tmp
    }

    #[test]
    fn loads_listed_languages_in_order() {
        let tmp = two_language_dir();
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert_eq!(reg.codes().collect::<Vec<_>>(), ["ro", "en"]);
        assert_eq!(reg.get("ro").unwrap().display_name(), "Romana");
        assert_eq!(reg.default_pack().unwrap().code(), "en");
        assert!(reg.unavailable().is_empty());
    }

    #[test]
    fn specials_strip_trailing_newline() {
        let tmp = two_language_dir();
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert_eq!(
            reg.get("ro").unwrap().special(Special::NotPresent),
            "Nu exista date."
        );
        assert_eq!(reg.get("en").unwrap().special(Special::None), "None");
    }

    #[test]
    fn labels_and_code_tables() {
        let tmp = two_language_dir();
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        let ro = reg.get("ro").unwrap();
        assert_eq!(ro.label("PID", 17), Some("Cod numeric personal"));
        assert_eq!(ro.label("PID", 9999), None);
        assert_eq!(ro.label("EVN", 1), None);
        let en = reg.get("en").unwrap();
        assert_eq!(
            en.code_lookup(MSH_MESSAGE_TYPE, "ADT"),
            Some("Admit/Discharge/Transfer")
        );
        assert_eq!(en.code_lookup(MSH_MESSAGE_TYPE, "adt"), None);
        assert_eq!(en.code_lookup(MSH_EVENT_TYPE, "ZZZ"), None);
    }

    #[test]
    fn empty_languages_file_gives_empty_registry() {
        let tmp = TempDir::new().unwrap();
        write(tmp.path(), LANGUAGES_FILE, "");
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert!(reg.is_empty());
        assert!(reg.default_pack().is_none());
    }

    #[test]
    fn missing_languages_file_is_fatal() {
        let tmp = TempDir::new().unwrap();
        assert!(matches!(
            LanguageRegistry::load(tmp.path()),
            Err(LexiconError::RegistryMissing(_))
        ));
    }

    #[test]
    fn pack_without_specials_is_unavailable() {
        let tmp = two_language_dir();
        let d = tmp.path();
        write(
            d,
            LANGUAGES_FILE,
            "Romana (ro)\nDeutsch (de)\nEnglish (en)\n",
        );
        write(d, "-none-.de", "Keine");
        write(d, "PID.de", "4=Name\n");
        let reg = LanguageRegistry::load(d).unwrap();
        assert_eq!(reg.codes().collect::<Vec<_>>(), ["ro", "en"]);
        assert_eq!(reg.unavailable().len(), 1);
        assert_eq!(reg.unavailable()[0].code, "de");
    }

    #[test]
    fn empty_special_makes_pack_unavailable() {
        let tmp = two_language_dir();
        write(tmp.path(), "-none-.ro", "\n");
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert!(reg.get("ro").is_none());
    }

    #[test]
    fn language_line_grammar() {
        assert_eq!(parse_language_line("Romana (ro)"), Some(("Romana", "ro")));
        assert_eq!(
            parse_language_line("Français (fr)\r"),
            Some(("Français", "fr"))
        );
        assert_eq!(
            parse_language_line("Brazilian Portuguese (pt-BR)"),
            Some(("Brazilian Portuguese", "pt-BR"))
        );
        assert_eq!(parse_language_line("Romana(ro)"), None);
        assert_eq!(parse_language_line("Romana ()"), None);
        assert_eq!(parse_language_line(" (ro)"), None);
        assert_eq!(parse_language_line("Romana (r o)"), None);
        assert_eq!(parse_language_line("Romana"), None);
    }

    #[test]
    fn bad_lines_are_skipped() {
        let tmp = two_language_dir();
        write(
            tmp.path(),
            LANGUAGES_FILE,
            "Romana (ro)\nnonsense\n\nEnglish (en)\nRomana again (ro)\n",
        );
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert_eq!(reg.codes().collect::<Vec<_>>(), ["ro", "en"]);
        assert_eq!(reg.get("ro").unwrap().display_name(), "Romana");
    }

    #[test]
    fn lexicon_line_rules() {
        let text =
            "1=First\n# 2=Commented\n0=Zero\nx=Bad\n3=\nnoequals\n4 =  Spaced  \n1=Override\n";
        let lex = parse_lexicon(text, Path::new("T.xx"));
        assert_eq!(lex.len(), 2);
        assert_eq!(lex[&1], "Override");
        assert_eq!(lex[&4], "Spaced");
    }

    #[test]
    fn empty_lexicon_file_is_present_but_empty() {
        let tmp = two_language_dir();
        write(tmp.path(), "EVN.en", "");
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        assert_eq!(
            reg.get("en").unwrap().lexicon("EVN").map(|l| l.len()),
            Some(0)
        );
    }

    #[test]
    fn file_names_map_to_their_own_segment_only() {
        let tmp = two_language_dir();
        write(tmp.path(), "OBX.en", "5=Observation value\n");
        write(tmp.path(), "XYZ.en", "1=Ignored\n");
        write(tmp.path(), "OBX.ro", "");
        let reg = LanguageRegistry::load(tmp.path()).unwrap();
        let en = reg.get("en").unwrap();
        assert_eq!(en.label("OBX", 5), Some("Observation value"));
        assert!(en.lexicon("XYZ").is_none());
        assert_eq!(en.lexicon("OBR"), None);
        assert_eq!(reg.get("ro").unwrap().label("OBX", 5), None);
    }

    #[test]
    fn loading_is_deterministic() {
        let tmp = two_language_dir();
        let a = LanguageRegistry::load(tmp.path()).unwrap();
        let b = LanguageRegistry::load(tmp.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reload().unwrap(), a);
    }

    #[test]
    fn reload_picks_up_new_language() {
        let tmp = two_language_dir();
        let handle = RegistryHandle::load(tmp.path()).unwrap();
        let before = handle.snapshot();
        assert!(before.get("fr").is_none());

        let d = tmp.path();
        write(
            d,
            LANGUAGES_FILE,
            "Romana (ro)\nEnglish (en)\nFrançais (fr)\n",
        );
        specials(
            d,
            "fr",
            [
                "Dossiers HL7 non trouvés! Veuillez choisir une autre langue!",
                "Aucun",
                "Pas présent",
            ],
        );
        handle.reload().unwrap();
        let fr = handle.snapshot();
        let fr = fr.get("fr").unwrap();
        assert_eq!(fr.display_name(), "Français");
        assert_eq!(fr.special(Special::None), "Aucun");
        assert_eq!(fr.special(Special::NotPresent), "Pas présent");
        assert_eq!(
            fr.special(Special::FilesNotFound),
            "Dossiers HL7 non trouvés! Veuillez choisir une autre langue!"
        );
        // the old snapshot is untouched
        assert!(before.get("fr").is_none());
    }

    #[test]
    fn failed_reload_keeps_previous_snapshot() {
        let tmp = two_language_dir();
        let handle = RegistryHandle::load(tmp.path()).unwrap();
        let before = handle.snapshot();
        fs::remove_file(tmp.path().join(LANGUAGES_FILE)).unwrap();
        assert!(matches!(
            handle.reload(),
            Err(LexiconError::RegistryMissing(_))
        ));
        assert!(Arc::ptr_eq(&before, &handle.snapshot()));
    }
}
