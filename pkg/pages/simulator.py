import os
import sys

import streamlit as st

current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
sys.path.append(parent_dir)

from absf.errors import AbsfError
from absf.harness import run_suite
from pages.utils.scenario_loader import csv_download, output_dir, sidebar_scenario

st.set_page_config(
    page_title="Policy Simulator",
    page_icon="🛰️",
    layout="centered",
)

st.title("🛰️ Policy Simulator")

st.markdown("""
Runs the selected policies on the subframe-level simulator and reports system throughput,
per-user Jain's fairness index and 95% confidence intervals. Long runs take minutes.
""")

scenario = sidebar_scenario()

all_policies = ["legacy", "fixed-ratio:4/8", "fixed-ratio:5/8", "fixed-ratio:6/8", "max-throughput", "asymptotic-pf", "dynamic-pf"]
policies = st.sidebar.multiselect("Policies", all_policies, default=[p for p in scenario.policies if p in all_policies])
duration = st.sidebar.number_input("Duration (s)", min_value=1.0, value=float(min(scenario.sim.duration_s, 60.0)), step=10.0)

if 'suite' not in st.session_state:
    st.session_state.suite = None

if st.sidebar.button("🛰️ Run simulations"):
    if not policies:
        st.error("Select at least one policy.")
        st.stop()
    sim = scenario.sim.model_copy(update={"duration_s": duration})
    run = scenario.model_copy(update={"policies": policies, "sim": sim})
    with st.spinner(f"Simulating {len(policies)} policies for {duration:.0f} s..."):
        try:
            st.session_state.suite = run_suite(run, output_dir(scenario, "simulate"))
        except AbsfError as e:
            st.error(f"Simulation failed: {e}")
            st.stop()

suite = st.session_state.suite
if suite is not None:
    for failure in suite.failures:
        st.error(f"{failure['policy']} (seed {failure['seed']}): {failure['error']}")
    st.subheader("Summary")
    st.dataframe(suite.summary, use_container_width=True)
    csv_download(suite.summary, "summary.csv")

    if not suite.summary.empty:
        col1, col2 = st.columns(2)
        with col1:
            st.caption("System throughput (bit/s)")
            st.bar_chart(suite.summary.set_index("policy")["system_throughput"])
        with col2:
            st.caption("Per-user JFI (long-run and windowed)")
            st.bar_chart(suite.summary.set_index("policy")[["jfi", "jfi_windowed"]])

    for (policy, seed), report in suite.reports.items():
        with st.expander(f"{policy} - seed {seed}"):
            series = report.timeseries.groupby("time_s")["throughput_bps"].sum()
            st.line_chart(series)
            csv_download(report.timeseries, f"{policy.replace(':', '_').replace('/', '-')}_seed{seed}.csv")
