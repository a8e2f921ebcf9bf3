use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Index of a section inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SectionId(pub usize);

/// Decides the learning-rate group and how gradients are buffered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Weight,
    Bias,
    /// Hash-grid feature table. Gradients are sparse.
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: SectionKind,
    pub values: Vec<T>,
    pub grads: Vec<T>,
}

impl<T: Real> Section<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Flat named parameter sections with matching gradient buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    sections: Vec<Section<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            sections: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: SectionKind,
        values: Vec<T>,
    ) -> Result<SectionId> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Config(format!(
                "section `{name}` has shape {shape:?} but {} values",
                values.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate section `{name}`")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "section `{name}` has a non-finite value at {i}"
            )));
        }
        let id = SectionId(self.sections.len());
        self.index.insert(name.clone(), id.0);
        let grads = vec![T::zero(); values.len()];
        self.sections.push(Section {
            name,
            shape,
            kind,
            values,
            grads,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<SectionId> {
        self.index.get(name).map(|&i| SectionId(i))
    }

    pub fn require(&self, name: &str) -> Result<SectionId> {
        self.id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter section `{name}`")))
    }

    pub fn sections(&self) -> &[Section<T>] {
        &self.sections
    }

    pub fn sections_mut(&mut self) -> &mut [Section<T>] {
        &mut self.sections
    }

    pub fn section(&self, id: SectionId) -> &Section<T> {
        &self.sections[id.0]
    }

    pub fn section_mut(&mut self, id: SectionId) -> &mut Section<T> {
        &mut self.sections[id.0]
    }

    pub fn values(&self, id: SectionId) -> &[T] {
        &self.sections[id.0].values
    }

    pub fn values_mut(&mut self, id: SectionId) -> &mut [T] {
        &mut self.sections[id.0].values
    }

    pub fn grads(&self, id: SectionId) -> &[T] {
        &self.sections[id.0].grads
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.sections.iter().map(|s| s.values.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.sections {
            s.grads.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds a gradient buffer into the stored grads. Sections are visited in
    /// store order and sparse entries in insertion order, so the result does
    /// not depend on how work was scheduled.
    pub fn accumulate(&mut self, buffer: &GradBuffer<T>) {
        for (section, grad) in self.sections.iter_mut().zip(&buffer.sections) {
            match grad {
                SectionGrad::Dense(g) => {
                    for (dst, &src) in section.grads.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                SectionGrad::Sparse(entries) => {
                    for &(i, v) in entries {
                        section.grads[i as usize] += v;
                    }
                }
            }
        }
    }

    /// Converts every section to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            sections: self
                .sections
                .iter()
                .map(|s| Section {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    kind: s.kind,
                    values: s.values.iter().map(|v| U::lit(v.as_f64())).collect(),
                    grads: s.grads.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Names that start with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = SectionId> + 'a {
        self.sections
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.name.starts_with(prefix))
            .map(|(i, _)| SectionId(i))
    }
}

#[derive(Debug, Clone)]
enum SectionGrad<T> {
    Dense(Vec<T>),
    Sparse(Vec<(u32, T)>),
}

/// Per-worker gradient accumulator laid out like a [`ParamStore`]. Dense
/// sections hold a full buffer; table sections collect `(index, value)` pairs.
#[derive(Debug, Clone)]
pub struct GradBuffer<T> {
    sections: Vec<SectionGrad<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        let sections = store
            .sections
            .iter()
            .map(|s| match s.kind {
                SectionKind::Table => SectionGrad::Sparse(Vec::new()),
                _ => SectionGrad::Dense(vec![T::zero(); s.values.len()]),
            })
            .collect();
        Self { sections }
    }

    /// Mutable dense gradient slice. Panics for table sections.
    pub fn dense_mut(&mut self, id: SectionId) -> &mut [T] {
        match &mut self.sections[id.0] {
            SectionGrad::Dense(g) => g,
            SectionGrad::Sparse(_) => panic!("section {} is sparse", id.0),
        }
    }

    pub fn scatter(&mut self, id: SectionId, index: usize, value: T) {
        match &mut self.sections[id.0] {
            SectionGrad::Dense(g) => g[index] += value,
            SectionGrad::Sparse(v) => v.push((index as u32, value)),
        }
    }

    /// Sum of absolute gradient mass in a section; used by tests.
    pub fn magnitude(&self, id: SectionId) -> f64 {
        match &self.sections[id.0] {
            SectionGrad::Dense(g) => g.iter().map(|v| v.abs().as_f64()).sum(),
            SectionGrad::Sparse(v) => v.iter().map(|(_, g)| g.abs().as_f64()).sum(),
        }
    }
}
