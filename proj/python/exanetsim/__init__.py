"""ExaNet interconnect simulator: addressing, routing, latency models and
OSU-style benchmark drivers."""

from _exanetsim import (  # noqa: F401
    FieldOverflow,
    ScenarioError,
    accel_schedule_distances,
    address_bytes,
    check_protection,
    classify_path,
    pack_address,
    path_latency_us,
    reference_table,
    route_hops,
    run_scenario_file,
    run_scenario_text,
    segment_payload,
    speedup_and_efficiency,
    unpack_address,
)
