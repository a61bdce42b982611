//! Formulas and programs of the protocol logic.

mod ast;
mod text;

pub use ast::{derived, Binder, Formula, Program, Term};
pub use text::{
    parse_formula, parse_formula_with, parse_program, print_formula, print_program,
};
