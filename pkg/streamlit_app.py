import streamlit as st
from streamlit_extras.switch_page_button import switch_page
from collections import defaultdict

# Set page configuration
st.set_page_config(
    page_title="ABS Lab",
    page_icon="📡",
    layout="wide",
    initial_sidebar_state="collapsed"
)

# Hide Streamlit footer, header, and main menu
st.markdown(
    """
    <style>
    #MainMenu {visibility: hidden;}
    footer {visibility: hidden;}
    header {visibility: hidden;}
    </style>
    """,
    unsafe_allow_html=True,
)

st.markdown("""
    <style>
    div.stButton > button {
        width: 100%;
        height: auto;
        min-height: 75px;
        white-space: normal;
        text-align: center;
        margin: 5px 0;
        padding: 10px;
    }
    </style>
""", unsafe_allow_html=True)

# Tools with categories and hidden keywords
tools = [
    {
        "name": "State Analysis",
        "page": "state_analysis",
        "icon": "📶",
        "description": "Per-state throughput, per-cell figures and relay gain",
        "category": "Analytical Model",
        "keywords": ["abs", "state", "throughput", "cell", "relay", "mmwave", "d2d", "efficiency", "analyze"],
    },
    {
        "name": "ABS Optimizer",
        "page": "abs_optimizer",
        "icon": "🎯",
        "description": "State probabilities and ABS pattern for a policy",
        "category": "Analytical Model",
        "keywords": ["optimize", "proportional fair", "pf", "probabilities", "pattern", "max throughput", "blanking"],
    },
    {
        "name": "Policy Simulator",
        "page": "simulator",
        "icon": "🛰️",
        "description": "Run policies on the event-driven simulator",
        "category": "Simulation",
        "keywords": ["simulate", "policy", "jfi", "fairness", "rwp", "mobility", "legacy", "dynamic"],
    },
    {
        "name": "Model Validation",
        "page": "model_validation",
        "icon": "✅",
        "description": "Analytical vs simulated throughput per state",
        "category": "Simulation",
        "keywords": ["validate", "validation", "confidence interval", "model", "simulation", "compare"],
    },
]

# Header
st.markdown("<h1 style='text-align: center;'>📡 ABS Lab</h1>", unsafe_allow_html=True)
st.markdown(
    "<p style='text-align: center;'>Almost blank subframe orchestration with mmWave D2D relay groups</p>",
    unsafe_allow_html=True,
)

# Search bar
search_query = st.text_input("🔍 Search for a tool...")

# Category filter
categories = sorted(set(tool['category'] for tool in tools))
selected_categories = st.multiselect("Filter by Category", categories, default=categories)


def filter_tools(tools, search_query, selected_categories):
    filtered = []
    for tool in tools:
        if tool['category'] not in selected_categories:
            continue
        if search_query:
            search_content = " ".join([
                tool['name'],
                tool['description'],
                " ".join(tool['keywords'])
            ]).lower()
            if search_query.lower() not in search_content:
                continue
        filtered.append(tool)
    return filtered


filtered_tools = filter_tools(tools, search_query, selected_categories)

tools_by_category = defaultdict(list)
for tool in filtered_tools:
    tools_by_category[tool['category']].append(tool)


def display_tool(tool):
    if st.button(f"{tool['icon']} {tool['name']}", key=tool['name'], help=tool['description']):
        switch_page(tool['page'])


for category in selected_categories:
    tools_in_category = tools_by_category.get(category, [])
    if tools_in_category:
        st.markdown(f"### {category}")

        cols = st.columns([1, 1, 1, 1])

        for i, tool in enumerate(tools_in_category):
            with cols[i % 4]:
                display_tool(tool)

        st.markdown("<br>", unsafe_allow_html=True)
