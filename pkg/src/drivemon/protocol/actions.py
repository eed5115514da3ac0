"""
Action dispatcher: runs the handlers bound to the actions the state machine emits.
"""

import logging
from typing import Any, Callable, Dict, Iterable, List

from drivemon.protocol.session import Action

logger = logging.getLogger(__name__)


class ActionDispatcher:
    """
    Maps each Action to a handler. A failing handler never raises out of dispatch:
    the failure is logged and returned as an error result.
    """

    def __init__(self, handlers: Dict[Action, Callable[..., Any]] = None):
        self.handlers: Dict[Action, Callable[..., Any]] = dict(handlers or {})

    def register(self, action: Action, handler: Callable[..., Any]) -> None:
        self.handlers[action] = handler

    def get_action_list(self) -> List[str]:
        return [action.value for action in self.handlers]

    def dispatch(self, action: Action, **kwargs) -> Dict[str, Any]:
        """
        Run the handler for one action.

        Args:
            action (Action): Action emitted by monitor_handle
            **kwargs: Passed through to the handler

        Returns:
            Dict[str, Any]: {"action", "status": "success"|"error", "result" or "error"}
        """
        handler = self.handlers.get(action)
        if handler is None:
            return {"action": action.value, "status": "error", "error": f"no handler for {action.value}"}
        try:
            return {"action": action.value, "status": "success", "result": handler(**kwargs)}
        except Exception as e:
            logger.error(f"{action.value} failed: {e}", exc_info=True)
            return {"action": action.value, "status": "error", "error": str(e)}

    def dispatch_all(self, actions: Iterable[Action], **kwargs) -> List[Dict[str, Any]]:
        results = []
        for action in actions:
            result = self.dispatch(action, **kwargs)
            results.append(result)
            if result["status"] == "error":
                break
        return results
