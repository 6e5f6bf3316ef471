use super::tensor::Real;

/// One named parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

/// Flat, ordered store of every trainable parameter in a model.
///
/// Layers keep indices into the store; the order of registration is the
/// order parameters are serialized and visited by the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "parameter extent");
        self.entries.push(ParamEntry {
            name: name.into(),
            shape,
            value,
        });
        self.entries.len() - 1
    }

    pub fn get(&self, id: usize) -> &[T] {
        &self.entries[id].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads<T> {
        Grads(
            self.entries
                .iter()
                .map(|e| vec![T::zero(); e.value.len()])
                .collect(),
        )
    }

    /// Flat scalar view used by gradient checks: `(entry, offset)` for a
    /// global scalar index.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            if flat < e.value.len() {
                return (i, flat);
            }
            flat -= e.value.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    value: e.value.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Real> Grads<T> {
    pub fn get_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.0[id]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in self.0.iter_mut().flatten() {
            *v *= k;
        }
    }

    pub fn flat(&self, entry: usize, offset: usize) -> T {
        self.0[entry][offset]
    }
}
