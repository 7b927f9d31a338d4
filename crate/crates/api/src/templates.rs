use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use swaas_core::model::{parse_template, AsreTemplate, QoRSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSummary {
    pub id: String,
    pub services: usize,
    pub qor: QoRSpec,
}

impl From<&AsreTemplate> for TemplateSummary {
    fn from(t: &AsreTemplate) -> Self {
        TemplateSummary { id: t.id.clone(), services: t.services.len(), qor: t.qor.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFileError {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateListing {
    pub templates: Vec<TemplateSummary>,
    pub errors: Vec<TemplateFileError>,
}

/// Every `*.json` file in `dir` parsed as a template. Files that fail to
/// parse are reported by name; two files declaring the same id are an error
/// on the second one.
pub fn load_templates(dir: &Path) -> io::Result<(Vec<AsreTemplate>, Vec<TemplateFileError>)> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();

    let mut templates: Vec<AsreTemplate> = Vec::new();
    let mut errors = Vec::new();
    for path in files {
        let file = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let text = std::fs::read_to_string(&path)?;
        match parse_template(&text) {
            Ok(t) if templates.iter().any(|o| o.id == t.id) => {
                errors.push(TemplateFileError { file, error: format!("duplicate template id {:?}", t.id) });
            }
            Ok(t) => templates.push(t),
            Err(e) => errors.push(TemplateFileError { file, error: e.to_string() }),
        }
    }
    templates.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((templates, errors))
}

pub fn list_templates(dir: &Path) -> io::Result<TemplateListing> {
    let (templates, errors) = load_templates(dir)?;
    Ok(TemplateListing { templates: templates.iter().map(TemplateSummary::from).collect(), errors })
}
