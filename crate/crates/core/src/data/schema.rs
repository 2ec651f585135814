use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Label used for the extra category that stands for a missing categorical cell.
/// It is written to CSV as an empty cell.
pub const MISSING_LABEL: &str = "";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical { categories: Vec<String> },
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    /// Marks the downstream prediction target. Targets are generated like any
    /// other column but are never masked by the missingness simulator.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub target: bool,
}

impl Column {
    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|s| s.to_string()).collect(),
            },
            target: false,
        }
    }

    pub fn numerical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
            target: false,
        }
    }

    pub fn as_target(mut self) -> Self {
        self.target = true;
        self
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { categories } => Some(categories),
            ColumnKind::Numerical => None,
        }
    }
}

/// Ordered column typing of a table.
///
/// Categorical columns (including a categorical target) form the `x_cat`
/// block, numerical columns the `x_num` block; both keep schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let schema: Self =
            serde_json::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate column name '{}'",
                    col.name
                )));
            }
            if let Some(cats) = col.categories() {
                if cats.len() < 2 {
                    return Err(DataError::InvalidSchema(format!(
                        "categorical column '{}' needs at least 2 categories",
                        col.name
                    )));
                }
                let distinct: HashSet<_> = cats.iter().collect();
                if distinct.len() != cats.len() {
                    return Err(DataError::InvalidSchema(format!(
                        "categorical column '{}' lists a category twice",
                        col.name
                    )));
                }
            }
        }
        if self.columns.iter().filter(|c| c.target).count() > 1 {
            return Err(DataError::InvalidSchema(
                "more than one target column".into(),
            ));
        }
        if !self.columns.iter().any(|c| !c.target) {
            return Err(DataError::InvalidSchema(
                "schema needs at least one non-target feature".into(),
            ));
        }
        Ok(())
    }

    /// Schema indices of the categorical block, in order.
    pub fn categorical_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].is_categorical())
            .collect()
    }

    /// Schema indices of the numerical block, in order.
    pub fn numerical_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| !self.columns[i].is_categorical())
            .collect()
    }

    pub fn n_categorical(&self) -> usize {
        self.columns.iter().filter(|c| c.is_categorical()).count()
    }

    pub fn n_numerical(&self) -> usize {
        self.columns.len() - self.n_categorical()
    }

    /// Cardinalities of the categorical block.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.columns
            .iter()
            .filter_map(|c| c.categories().map(<[String]>::len))
            .collect()
    }

    pub fn target_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.target)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Position of a schema column inside its type block.
    pub fn block_position(&self, column: usize) -> usize {
        let categorical = self.columns[column].is_categorical();
        self.columns[..column]
            .iter()
            .filter(|c| c.is_categorical() == categorical)
            .count()
    }

    /// Adds the missing-category label to a categorical column if absent and
    /// returns its code.
    pub fn ensure_missing_category(&mut self, column: usize) -> u32 {
        match &mut self.columns[column].kind {
            ColumnKind::Categorical { categories } => {
                match categories.iter().position(|c| c == MISSING_LABEL) {
                    Some(pos) => pos as u32,
                    None => {
                        categories.push(MISSING_LABEL.to_string());
                        (categories.len() - 1) as u32
                    }
                }
            }
            ColumnKind::Numerical => panic!("column {column} is numerical"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_json_document() {
        let text = r#"{"columns":[
            {"name":"age","kind":"numerical"},
            {"name":"sex","kind":"categorical","categories":["F","M"]},
            {"name":"income","kind":"categorical","categories":["<=50K",">50K"],"target":true}
        ]}"#;
        let schema = FeatureSchema::from_json(text).unwrap();
        assert_eq!(schema.categorical_columns(), vec![1, 2]);
        assert_eq!(schema.numerical_columns(), vec![0]);
        assert_eq!(schema.target_column(), Some(2));
        assert_eq!(schema.cardinalities(), vec![2, 2]);
        assert_eq!(schema.block_position(2), 1);
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(back, schema);
    }

    #[test]
    fn rejects_invalid_schemas() {
        let dup = vec![Column::numerical("a"), Column::numerical("a")];
        assert!(FeatureSchema::new(dup).is_err());
        let card = vec![Column::categorical("c", &["x"])];
        assert!(FeatureSchema::new(card).is_err());
        let only_target = vec![Column::numerical("y").as_target()];
        assert!(FeatureSchema::new(only_target).is_err());
    }

    #[test]
    fn adult_shaped_schema_is_accepted() {
        let mut cols: Vec<Column> = (0..9)
            .map(|i| Column::categorical(&format!("c{i}"), &["a", "b", "c"]))
            .collect();
        cols.extend((0..6).map(|i| Column::numerical(&format!("n{i}"))));
        let schema = FeatureSchema::new(cols).unwrap();
        assert_eq!(schema.n_categorical(), 9);
        assert_eq!(schema.n_numerical(), 6);
    }

    #[test]
    fn missing_category_is_added_once() {
        let mut schema = FeatureSchema::new(vec![Column::categorical("c", &["x", "y"])]).unwrap();
        assert_eq!(schema.ensure_missing_category(0), 2);
        assert_eq!(schema.ensure_missing_category(0), 2);
        assert_eq!(schema.cardinalities(), vec![3]);
    }
}
