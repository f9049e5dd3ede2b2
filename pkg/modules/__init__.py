# modules/__init__.py
# Component-based ROM toolkit: every concern lives in its own module
