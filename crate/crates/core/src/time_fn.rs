use std::fmt;
use std::sync::Arc;

use crate::error::{MfcError, Result};

/// A coefficient that depends on time.
///
/// Tables are left-constant: the value at `t` is the one attached to the last
/// knot `<= t` (the first value before the first knot).
#[derive(Clone)]
pub enum TimeFn<T> {
    Const(T),
    Table { knots: Vec<f64>, values: Vec<T> },
    Func(Arc<dyn Fn(f64) -> T + Send + Sync>),
}

impl<T: Clone> TimeFn<T> {
    pub fn table(knots: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(MfcError::config(
                "time table needs one value per knot and at least one knot",
            ));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MfcError::config("time table knots must be finite and strictly increasing"));
        }
        Ok(TimeFn::Table { knots, values })
    }

    pub fn func(f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        TimeFn::Func(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> T {
        match self {
            TimeFn::Const(v) => v.clone(),
            TimeFn::Table { knots, values } => {
                let idx = knots.partition_point(|k| *k <= t);
                values[idx.saturating_sub(1)].clone()
            }
            TimeFn::Func(f) => f(t),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, TimeFn::Const(_))
    }

    pub fn map<U, F>(&self, f: F) -> TimeFn<U>
    where
        T: Send + Sync + 'static,
        U: Clone,
        F: Fn(&T) -> U + Send + Sync + 'static,
    {
        match self {
            TimeFn::Const(v) => TimeFn::Const(f(v)),
            TimeFn::Table { knots, values } => TimeFn::Table {
                knots: knots.clone(),
                values: values.iter().map(&f).collect(),
            },
            TimeFn::Func(g) => {
                let g = Arc::clone(g);
                TimeFn::Func(Arc::new(move |t| f(&g(t))))
            }
        }
    }
}

impl<T: Clone> From<T> for TimeFn<T> {
    fn from(v: T) -> Self {
        TimeFn::Const(v)
    }
}

impl<T: fmt::Debug> fmt::Debug for TimeFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Const(v) => f.debug_tuple("Const").field(v).finish(),
            TimeFn::Table { knots, values } => f
                .debug_struct("Table")
                .field("knots", knots)
                .field("values", values)
                .finish(),
            TimeFn::Func(_) => f.write_str("Func(..)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_left_constant() {
        let tf = TimeFn::table(vec![0.0, 0.5], vec![1.0, 3.0]).unwrap();
        assert_eq!(tf.at(0.0), 1.0);
        assert_eq!(tf.at(0.4999), 1.0);
        assert_eq!(tf.at(0.5), 3.0);
        assert_eq!(tf.at(1.0), 3.0);
        assert_eq!(tf.at(-1.0), 1.0);
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(TimeFn::table(vec![0.5, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn map_composes_with_closures() {
        let tf = TimeFn::func(|t: f64| 2.0 * t).map(|v| v + 1.0);
        assert_eq!(tf.at(0.25), 1.5);
    }
}
