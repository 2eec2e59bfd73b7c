#ifndef SWEPTPLAN_H
#define SWEPTPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SP_STAGE_PLAN 1

#define SP_STAGE_SWEEP 2

#define SP_STAGE_TRACK 4

#define SP_STAGE_METRICS 8

#define SP_STAGE_ALL 15

// Result code of every fallible call.
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_INVALID_UTF8 = 3,
  SP_STATUS_PARSE_ERROR = 4,
  SP_STATUS_VALIDATION_ERROR = 5,
  SP_STATUS_NOT_FOUND = 6,
  SP_STATUS_BUFFER_TOO_SMALL = 7,
  SP_STATUS_COMPUTATION_FAILED = 8,
  SP_STATUS_PANIC = 9,
} SpStatus;

typedef struct SpScenario SpScenario;

typedef struct SpTrajectory SpTrajectory;

typedef struct SpVehicle SpVehicle;

// Steering angle (radians, in (−π/2, π/2]) and signed speed of one wheel.
typedef struct SpWheelCommand {
  double gamma;
  double speed;
} SpWheelCommand;

// Planar pose; `phi` in radians.
typedef struct SpPose {
  double x;
  double y;
  double phi;
} SpPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or NULL. The
// pointer stays valid until the next call into this library on the same
// thread.
const char *sp_last_error(void);

// Library version as a static NUL-terminated string.
const char *sp_version(void);

// Rectangular vehicle with `axle_count` evenly spaced axles of two wheels.
enum SpStatus sp_vehicle_new(double length,
                             double width,
                             size_t axle_count,
                             double v_max,
                             double omega_max,
                             struct SpVehicle **out_vehicle);

void sp_vehicle_free(struct SpVehicle *vehicle);

size_t sp_vehicle_wheel_count(const struct SpVehicle *vehicle);

// Signed distance from a body-frame point to the footprint boundary and
// its gradient (`out_gradient` holds two doubles; may be NULL).
enum SpStatus sp_footprint_sdf(const struct SpVehicle *vehicle,
                               double x,
                               double y,
                               double *out_value,
                               double *out_gradient);

// Per-wheel commands for the body twist `(vx, vy, omega)`. Writes
// `*out_count` wheels; fails with `BufferTooSmall` (still setting
// `*out_count`) when `capacity` is insufficient.
enum SpStatus sp_allocate(const struct SpVehicle *vehicle,
                          double vx,
                          double vy,
                          double omega,
                          struct SpWheelCommand *out_commands,
                          size_t capacity,
                          size_t *out_count);

// Least-squares body twist (three doubles) from one command per wheel.
enum SpStatus sp_reconstruct_twist(const struct SpVehicle *vehicle,
                                   const struct SpWheelCommand *commands,
                                   size_t count,
                                   double *out_twist,
                                   double *out_residual);

// Parses a trajectory document as written to `trajectory.json`.
enum SpStatus sp_trajectory_from_json(const char *json, struct SpTrajectory **out_trajectory);

void sp_trajectory_free(struct SpTrajectory *trajectory);

enum SpStatus sp_trajectory_duration(const struct SpTrajectory *trajectory, double *out_seconds);

// Pose at time `t`; `InvalidArgument` outside `[0, duration]`.
enum SpStatus sp_trajectory_pose(const struct SpTrajectory *trajectory,
                                 double t,
                                 struct SpPose *out_pose);

// Swept area of the trajectory on a grid of `resolution` metres covering
// the path grown by the vehicle length. `threads` = 0 uses every core.
enum SpStatus sp_swept_area(const struct SpTrajectory *trajectory,
                            const struct SpVehicle *vehicle,
                            double resolution,
                            size_t threads,
                            double *out_area);

// Loads and validates a scenario file.
enum SpStatus sp_scenario_load(const char *path, struct SpScenario **out_scenario);

void sp_scenario_free(struct SpScenario *scenario);

// Runs the stages selected by the `SP_STAGE_*` bit mask and writes their
// artifacts to `out_dir`.
enum SpStatus sp_pipeline_run(const struct SpScenario *scenario,
                              const char *out_dir,
                              uint32_t stages);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWEPTPLAN_H */
