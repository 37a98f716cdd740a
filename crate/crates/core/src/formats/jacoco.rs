//! JaCoCo XML report reader.
//!
//! Only `<line nr mi ci>` elements are read; counters are ignored. A line is
//! instrumented when `mi + ci > 0` and covered when `ci > 0`. Files are
//! identified as `package/sourcefile`.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{CoverageStore, FileLineCoverage, FormatError};

fn attr(el: &BytesStart<'_>, name: &[u8]) -> Result<Option<String>, FormatError> {
    for a in el.attributes() {
        let a = a.map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
        if a.key.as_ref() == name {
            let v = a
                .unescape_value()
                .map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn number(el: &BytesStart<'_>, name: &str, required: bool) -> Result<u64, FormatError> {
    match attr(el, name.as_bytes())? {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| FormatError::SchemaViolation(format!("line attribute {name}=\"{v}\" is not a number"))),
        None if required => Err(FormatError::SchemaViolation(format!(
            "line element without `{name}` attribute"
        ))),
        None => Ok(0),
    }
}

fn file_id(package: Option<&str>, name: String) -> String {
    match package {
        Some(pkg) if !pkg.is_empty() => format!("{pkg}/{name}"),
        _ => name,
    }
}

pub fn parse_jacoco_xml(xml_text: &str) -> Result<Vec<FileLineCoverage>, FormatError> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut store = CoverageStore::new();
    let mut package: Option<String> = None;
    let mut current: Option<FileLineCoverage> = None;
    let mut saw_root = false;
    let mut depth = 0usize;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| FormatError::MalformedDocument(format!("at byte {}: {e}", reader.buffer_position())))?;
        match &event {
            Event::Start(_) => depth += 1,
            Event::End(_) => depth = depth.saturating_sub(1),
            Event::Eof if depth > 0 => return Err(FormatError::MalformedDocument("unexpected end of document".into())),
            _ => {}
        }
        match event {
            Event::Start(el) | Event::Empty(el) if !saw_root => {
                if el.name().as_ref() != b"report" {
                    return Err(FormatError::SchemaViolation(format!(
                        "root element is <{}>, expected <report>",
                        String::from_utf8_lossy(el.name().as_ref())
                    )));
                }
                saw_root = true;
            }
            Event::Start(el) => match el.name().as_ref() {
                b"package" => package = Some(attr(&el, b"name")?.unwrap_or_default()),
                b"sourcefile" => {
                    let name = attr(&el, b"name")?
                        .ok_or_else(|| FormatError::SchemaViolation("sourcefile without name".into()))?;
                    current = Some(FileLineCoverage::empty(file_id(package.as_deref(), name)));
                }
                _ => {}
            },
            Event::Empty(el) => match el.name().as_ref() {
                b"line" => {
                    if let Some(file) = current.as_mut() {
                        let nr = number(&el, "nr", true)?;
                        let nr = u32::try_from(nr)
                            .ok()
                            .filter(|n| *n > 0)
                            .ok_or_else(|| FormatError::SchemaViolation(format!("line nr {nr} out of range")))?;
                        let mi = number(&el, "mi", false)?;
                        let ci = number(&el, "ci", false)?;
                        if mi + ci > 0 {
                            file.record(nr, ci > 0);
                        }
                    }
                }
                b"sourcefile" => {
                    let name = attr(&el, b"name")?
                        .ok_or_else(|| FormatError::SchemaViolation("sourcefile without name".into()))?;
                    store.merge_file(&FileLineCoverage::empty(file_id(package.as_deref(), name)));
                }
                _ => {}
            },
            Event::End(el) => match el.name().as_ref() {
                b"sourcefile" => {
                    if let Some(file) = current.take() {
                        store.merge_file(&file);
                    }
                }
                b"package" => package = None,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_root {
        return Err(FormatError::MalformedDocument("no <report> element".into()));
    }
    Ok(store.to_vec())
}
