#ifndef CEILING_MPC_H
#define CEILING_MPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_SOLVER_FAILURE = 3,
  CM_STATUS_IO = 4,
  CM_STATUS_PANIC = 5,
} CmStatus;

/**
 * Receding-horizon controller handle.
 */
typedef struct CmController CmController;

/**
 * Moving-horizon estimator handle.
 */
typedef struct CmEstimator CmEstimator;

typedef struct CmVehicleParams {
  double mass;
  double gravity;
  double rotor_radius;
  double arm_length;
  double thrust_coeff;
  double drag_torque_coeff;
} CmVehicleParams;

typedef struct CmCeilingModel {
  double ceiling_height;
  double kappa;
  double d_on;
  double d_min;
  double max_ratio;
  double rotor_radius;
  double prop_offset;
} CmCeilingModel;

typedef struct CmMeasurement {
  double position[3];
  double velocity[3];
  double f_z;
  double attitude[3];
} CmMeasurement;

/**
 * Flat input: collective thrust [N] and roll, pitch, yaw [rad].
 */
typedef struct CmControlInput {
  double f_z;
  double roll;
  double pitch;
  double yaw;
} CmControlInput;

/**
 * Position [m], velocity [m/s] and lumped external force [N], world frame.
 */
typedef struct CmAugmentedState {
  double position[3];
  double velocity[3];
  double f_ext[3];
} CmAugmentedState;

typedef struct CmReference {
  double position[3];
  double velocity[3];
  struct CmControlInput nominal;
} CmReference;

/**
 * Hold-phase results of one scenario run.
 */
typedef struct CmRunSummary {
  double dz_over_r;
  double error_mean;
  double error_std;
  double z_error_mean;
  double contact_fraction;
  bool stuck;
  double p_ave;
  double i_ave;
  double f_hat_z_min;
  double f_hat_z_max;
  double f_z_min;
  double f_z_max;
  uint64_t degraded_ticks;
  double estimator_mean_ms;
  double controller_mean_ms;
} CmRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the buffer size needed for the
 * full message including the terminator, or 0 when there is no message.
 */
size_t cm_last_error_message(char *buf, size_t len);

struct CmVehicleParams cm_vehicle_params_default(void);

struct CmCeilingModel cm_ceiling_model_default(void);

/**
 * Thrust amplification at rotor-to-ceiling distance `d` [m]; NaN when
 * `model` is null.
 */
double cm_thrust_ratio(const struct CmCeilingModel *model, double d);

/**
 * X-configuration allocation of thrust `f_z` [N] and body torques
 * `torque[3]` [N·m] to rotor speeds `omega_out[4]` [rad/s]. The achieved
 * wrench is written to `achieved_out[4]` and the saturation flag to
 * `saturated_out`; both may be null.
 */
enum CmStatus cm_allocate(const struct CmVehicleParams *params,
                          double omega_max,
                          double f_z,
                          const double *torque,
                          double *omega_out,
                          double *achieved_out,
                          bool *saturated_out);

/**
 * Creates an estimator. `config_toml` holds estimator settings in TOML
 * (the `[nmhe]` table of a scenario file, without the header) or is null
 * for defaults.
 */
enum CmStatus cm_estimator_new(const struct CmVehicleParams *params,
                               const char *config_toml,
                               struct CmEstimator **out);

/**
 * Adds measurement `y`, taken after input `u` was applied for one
 * interval, and writes the current estimate to `state_out`.
 */
enum CmStatus cm_estimator_push(struct CmEstimator *est,
                                const struct CmMeasurement *y,
                                const struct CmControlInput *u,
                                struct CmAugmentedState *state_out);

enum CmStatus cm_estimator_reset(struct CmEstimator *est);

void cm_estimator_free(struct CmEstimator *est);

/**
 * Creates a controller. `config_toml` is the `[nmpc]` table body or null.
 * With `force_feed` false the force estimate passed to the step is ignored.
 */
enum CmStatus cm_controller_new(const struct CmVehicleParams *params,
                                const char *config_toml,
                                bool force_feed,
                                struct CmController **out);

enum CmStatus cm_controller_set_force_feed(struct CmController *ctl, bool on);

/**
 * One control tick from `state[6]` (position, velocity) and force
 * estimate `f_ext[3]`. A solver failure is not an error: the previous
 * input is repeated and `degraded_out` (nullable) is set.
 */
enum CmStatus cm_controller_step(struct CmController *ctl,
                                 const double *state,
                                 const double *f_ext,
                                 const struct CmReference *reference,
                                 struct CmControlInput *input_out,
                                 bool *degraded_out);

void cm_controller_free(struct CmController *ctl);

/**
 * Runs the scenario described by `config_toml` (a full scenario file, or
 * null for defaults) with noise seed `seed`. When `out_dir` is not null the
 * trace, timing log and summary are written there.
 */
enum CmStatus cm_run_scenario(const char *config_toml,
                              uint64_t seed,
                              const char *out_dir,
                              struct CmRunSummary *summary_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CEILING_MPC_H */
