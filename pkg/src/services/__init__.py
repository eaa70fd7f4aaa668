"""
Services around trained models: checkpoint files and rendering.
"""
