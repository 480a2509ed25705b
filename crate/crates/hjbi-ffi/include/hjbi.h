#ifndef HJBI_H
#define HJBI_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes where they overlap.
 */
typedef enum HjbiStatus {
  HjbiStatus_Ok = 0,
  HjbiStatus_NullPointer = 1,
  HjbiStatus_InvalidArgument = 2,
  HjbiStatus_SolverFailure = 3,
  HjbiStatus_CordesViolation = 4,
  HjbiStatus_Panic = 5,
} HjbiStatus;

/**
 * Opaque periodic mesh handle.
 */
typedef struct HjbiMesh HjbiMesh;

/**
 * Opaque problem handle.
 */
typedef struct HjbiProblem HjbiProblem;

/**
 * Opaque solve-result handle.
 */
typedef struct HjbiSolution HjbiSolution;

/**
 * Opaque finite element space handle.
 */
typedef struct HjbiSpace HjbiSpace;

/**
 * Sampled Cordes diagnostics, plain data.
 */
typedef struct HjbiCordesReport {
  uint8_t holds;
  double worst_margin;
  double max_admissible_delta;
  double zeta1;
  double zeta2;
  double min_c;
} HjbiCordesReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. Valid until the
 * next failing call; do not free.
 */
const char *hjbi_last_error_message(void);

/**
 * Library version string; static storage, do not free.
 */
const char *hjbi_version(void);

/**
 * Build the uniform periodic triangulation with `m x m` cells.
 */
enum HjbiStatus hjbi_mesh_create(size_t m, struct HjbiMesh **out);

/**
 * # Safety
 * `mesh` must be a pointer from `hjbi_mesh_create`, destroyed once.
 */
void hjbi_mesh_destroy(struct HjbiMesh *mesh);

/**
 * Element, face, and periodically-unique vertex counts.
 */
enum HjbiStatus hjbi_mesh_counts(const struct HjbiMesh *mesh,
                                 size_t *elements,
                                 size_t *faces,
                                 size_t *vertices);

/**
 * Build a finite element space; `continuity` is 0 for the discontinuous
 * space and 1 for the C0-periodic one.
 */
enum HjbiStatus hjbi_space_create(const struct HjbiMesh *mesh,
                                  size_t degree,
                                  uint32_t continuity,
                                  struct HjbiSpace **out);

/**
 * # Safety
 * `space` must be a pointer from `hjbi_space_create`, destroyed once.
 */
void hjbi_space_destroy(struct HjbiSpace *space);

/**
 * Total degrees of freedom; zero for a null handle.
 */
size_t hjbi_space_dofs(const struct HjbiSpace *space);

/**
 * The manufactured two-player benchmark problem.
 */
enum HjbiStatus hjbi_problem_create_exp1(size_t n_alpha, size_t n_beta, struct HjbiProblem **out);

/**
 * The effective-Hamiltonian benchmark cell problem at Hessian argument
 * `[[r_xx, r_xy], [r_xy, r_yy]]` and regularization `sigma`.
 * `constant_coefficients != 0` drops the oscillation.
 */
enum HjbiStatus hjbi_problem_create_exp2_cell(double r_xx,
                                              double r_xy,
                                              double r_yy,
                                              double sigma,
                                              size_t n_alpha,
                                              size_t n_beta,
                                              uint8_t constant_coefficients,
                                              struct HjbiProblem **out);

/**
 * # Safety
 * `problem` must be a pointer from a problem constructor, destroyed once.
 */
void hjbi_problem_destroy(struct HjbiProblem *problem);

/**
 * Sample the Cordes inequality on an `n_samples^2` state grid.
 */
enum HjbiStatus hjbi_cordes_check(const struct HjbiProblem *problem,
                                  size_t n_samples,
                                  struct HjbiCordesReport *out);

/**
 * Howard-solve the problem on the space. Nonpositive `eta1`/`eta2` select
 * the default penalties for the space degree.
 */
enum HjbiStatus hjbi_solve(const struct HjbiSpace *space,
                           const struct HjbiProblem *problem,
                           double theta,
                           double eta1,
                           double eta2,
                           double tol,
                           size_t max_iter,
                           struct HjbiSolution **out);

/**
 * # Safety
 * `solution` must be a pointer from `hjbi_solve`, destroyed once.
 */
void hjbi_solution_destroy(struct HjbiSolution *solution);

size_t hjbi_solution_iterations(const struct HjbiSolution *solution);

double hjbi_solution_final_residual(const struct HjbiSolution *solution);

uint8_t hjbi_solution_converged(const struct HjbiSolution *solution);

/**
 * A posteriori estimator of the stored solution.
 */
double hjbi_solution_estimator(const struct HjbiSolution *solution);

/**
 * Copy the coefficient vector into `buffer` (`len` must match the space
 * dimension).
 */
enum HjbiStatus hjbi_solution_copy_coefficients(const struct HjbiSolution *solution,
                                                double *buffer,
                                                size_t len);

/**
 * Point evaluation of the solution (coordinates wrap periodically).
 */
enum HjbiStatus hjbi_solution_value_at(const struct HjbiSolution *solution,
                                       double x,
                                       double y,
                                       double *value);

/**
 * Broken-norm error of a solution of the manufactured benchmark against
 * its closed-form solution (`lambda = 1`).
 */
enum HjbiStatus hjbi_solution_error_vs_exp1(const struct HjbiSolution *solution, double *error);

/**
 * One-shot approximation of the benchmark effective Hamiltonian on an
 * `m x m` C0-periodic space of the given degree.
 */
enum HjbiStatus hjbi_effective_hamiltonian_exp2(size_t m,
                                                size_t degree,
                                                double r_xx,
                                                double r_xy,
                                                double r_yy,
                                                double sigma,
                                                size_t n_alpha,
                                                size_t n_beta,
                                                uint8_t constant_coefficients,
                                                double tol,
                                                double *h_out);

/**
 * Closed-form reference value of the benchmark effective Hamiltonian.
 */
double hjbi_exp2_reference(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HJBI_H */
