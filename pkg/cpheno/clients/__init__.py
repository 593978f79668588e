from cpheno.clients.base_client import BaseClient, make_clients
from cpheno.clients.http_client import HTTPClient
from cpheno.clients.mock_client import IdentityAligner, RuleBasedRefiner, ScriptedClient

__all__ = [
    "BaseClient",
    "HTTPClient",
    "IdentityAligner",
    "RuleBasedRefiner",
    "ScriptedClient",
    "make_clients",
]
