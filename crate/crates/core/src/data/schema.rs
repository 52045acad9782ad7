use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    /// Category strings in code order; code `categories.len()` is the missing slot.
    pub categories: Vec<String>,
}

impl CategoricalColumn {
    pub fn missing_code(&self) -> u32 {
        self.categories.len() as u32
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveAttribute {
    pub name: String,
    /// Required for metadata-only attributes; for attributes that are also a
    /// categorical column it defaults to that column's categories.
    #[serde(default)]
    pub subgroups: Vec<String>,
    /// Remove the attribute from the model inputs (only meaningful when it is
    /// a categorical column).
    #[serde(default)]
    pub exclude_from_model: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub categorical: Vec<CategoricalColumn>,
    pub continuous: Vec<String>,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub sensitive: Vec<SensitiveAttribute>,
}

/// Where a sensitive attribute's subgroup codes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttributeSource {
    /// Same values as categorical column `index`.
    Categorical(usize),
    /// A column of its own that the model never sees.
    Metadata,
}

impl Schema {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut schema: Schema = serde_json::from_str(text)?;
        schema.resolve()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates the schema and fills default subgroup lists.
    pub fn resolve(&mut self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Schema("at least one task column is required".into()));
        }
        let mut seen = HashSet::new();
        let names = self
            .categorical
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.continuous.iter().map(String::as_str))
            .chain(self.tasks.iter().map(String::as_str));
        for name in names {
            if !seen.insert(name.to_string()) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for col in &self.categorical {
            if col.categories.is_empty() {
                return Err(Error::Schema(format!(
                    "categorical column `{}` has no categories",
                    col.name
                )));
            }
            let unique: HashSet<&String> = col.categories.iter().collect();
            if unique.len() != col.categories.len() {
                return Err(Error::Schema(format!(
                    "categorical column `{}` repeats a category",
                    col.name
                )));
            }
            if col.categories.iter().any(String::is_empty) {
                return Err(Error::Schema(format!(
                    "categorical column `{}` uses the empty string, which is reserved for missing",
                    col.name
                )));
            }
        }
        let mut attr_names = HashSet::new();
        for i in 0..self.sensitive.len() {
            let name = self.sensitive[i].name.clone();
            if !attr_names.insert(name.clone()) {
                return Err(Error::Schema(format!(
                    "sensitive attribute `{name}` listed twice"
                )));
            }
            match self.categorical.iter().find(|c| c.name == name) {
                Some(col) => {
                    let attr = &mut self.sensitive[i];
                    if attr.subgroups.is_empty() {
                        attr.subgroups = col.categories.clone();
                    } else if attr.subgroups != col.categories {
                        return Err(Error::Schema(format!(
                            "sensitive attribute `{name}` subgroups differ from its categorical column"
                        )));
                    }
                }
                None => {
                    if seen.contains(&name) {
                        return Err(Error::Schema(format!(
                            "sensitive attribute `{name}` collides with a non-categorical column"
                        )));
                    }
                    if self.sensitive[i].exclude_from_model {
                        return Err(Error::Schema(format!(
                            "`exclude_from_model` on `{name}`, which is not a model input"
                        )));
                    }
                }
            }
            let attr = &self.sensitive[i];
            if attr.subgroups.len() < 2 {
                return Err(Error::Schema(format!(
                    "sensitive attribute `{name}` needs at least 2 subgroups"
                )));
            }
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.sensitive.iter().position(|a| a.name == name)
    }

    pub fn attribute_source(&self, attr: usize) -> AttributeSource {
        let name = &self.sensitive[attr].name;
        match self.categorical.iter().position(|c| &c.name == name) {
            Some(i) => AttributeSource::Categorical(i),
            None => AttributeSource::Metadata,
        }
    }

    /// Indices of the categorical columns fed to the model.
    pub fn model_categorical(&self) -> Vec<usize> {
        (0..self.categorical.len())
            .filter(|&i| {
                !self
                    .sensitive
                    .iter()
                    .any(|a| a.exclude_from_model && a.name == self.categorical[i].name)
            })
            .collect()
    }

    /// Names of every model input column, categorical first.
    pub fn input_features(&self) -> Vec<String> {
        self.model_categorical()
            .into_iter()
            .map(|i| self.categorical[i].name.clone())
            .chain(self.continuous.iter().cloned())
            .collect()
    }

    pub fn metadata_attributes(&self) -> Vec<usize> {
        (0..self.sensitive.len())
            .filter(|&a| self.attribute_source(a) == AttributeSource::Metadata)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> &'static str {
        r#"{
            "categorical": [{"name": "AGE_GROUP", "categories": ["Adult", "Pediatric"]},
                            {"name": "DIAB", "categories": ["N", "Y", "U"]}],
            "continuous": ["BMI"],
            "tasks": ["REJECTION"],
            "sensitive": [{"name": "AGE_GROUP"}, {"name": "GENDER", "subgroups": ["M", "F"]}]
        }"#
    }

    #[test]
    fn resolves_subgroups_from_categories() {
        let s = Schema::from_json_str(base()).unwrap();
        assert_eq!(s.sensitive[0].subgroups, vec!["Adult", "Pediatric"]);
        assert_eq!(s.attribute_source(0), AttributeSource::Categorical(0));
        assert_eq!(s.attribute_source(1), AttributeSource::Metadata);
        assert_eq!(s.input_features(), vec!["AGE_GROUP", "DIAB", "BMI"]);
        assert_eq!(s.categorical[1].missing_code(), 3);
    }

    #[test]
    fn exclusion_flag_drops_model_input() {
        let text = base().replace(
            r#"{"name": "AGE_GROUP"}"#,
            r#"{"name": "AGE_GROUP", "exclude_from_model": true}"#,
        );
        let s = Schema::from_json_str(&text).unwrap();
        assert_eq!(s.model_categorical(), vec![1]);
    }

    #[test]
    fn rejects_invalid_schemas() {
        let dup = base().replace(r#""continuous": ["BMI"]"#, r#""continuous": ["DIAB"]"#);
        assert!(Schema::from_json_str(&dup).is_err());
        let no_tasks = base().replace(r#"["REJECTION"]"#, "[]");
        assert!(Schema::from_json_str(&no_tasks).is_err());
        let one_group = base().replace(r#"["M", "F"]"#, r#"["M"]"#);
        assert!(Schema::from_json_str(&one_group).is_err());
    }
}
