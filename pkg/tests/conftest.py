import re

# criterion number -> short name, keyed from acceptance test names
ACCEPTANCE_TESTS = {
    "test_criterion_1_gradient_suite": (1, "gradient suite"),
    "test_criterion_2_rendering_invariants": (2, "rendering invariants"),
    "test_criterion_3_motion_field_identity": (3, "motion-field identity"),
    "test_criterion_4_loss_minima": (4, "loss minima"),
    "test_criterion_5_stop_gradient_rule": (5, "stop-gradient rule"),
    "test_criterion_6_end_to_end_training": (6, "end-to-end desk-scale training"),
    "test_criterion_7_pose_consistency": (7, "pose consistency across appearances"),
    "test_criterion_8_ablation_direction": (8, "regularization ablation direction"),
    "test_criterion_9_determinism_persistence": (9, "determinism and persistence"),
}


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    results = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if getattr(rep, "when", "call") != "call" and status != "error":
                continue
            name = re.sub(r"\[.*\]$", "", rep.location[2]).split(".")[-1]
            if name in ACCEPTANCE_TESTS:
                num, label = ACCEPTANCE_TESTS[name]
                ok = status == "passed" and results.get(num, (True, label))[0]
                results[num] = (status == "passed", label)
    if results:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for num in sorted(results):
            ok, label = results[num]
            terminalreporter.write_line(
                f"  [{num}] {label}: {'PASS' if ok else 'FAIL'}")
