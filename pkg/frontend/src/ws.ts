// Reconnecting websocket wrapper. The console is stateless over
// reconnect: the server pushes a full snapshot on connect, so this layer
// only needs backoff and callback plumbing.

export interface SocketCallbacks {
  onMessage: (raw: string) => void;
  onStatus: (connected: boolean) => void;
}

export class ReconnectingSocket {
  private url: string;
  private callbacks: SocketCallbacks;
  private socket: WebSocket | null = null;
  private retryMs = 500;
  private closed = false;

  constructor(url: string, callbacks: SocketCallbacks) {
    this.url = url;
    this.callbacks = callbacks;
  }

  connect(): void {
    if (this.closed) return;
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.retryMs = 500;
      this.callbacks.onStatus(true);
    };
    socket.onmessage = (event) => this.callbacks.onMessage(String(event.data));
    socket.onclose = () => {
      this.callbacks.onStatus(false);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 8000);
      }
    };
    socket.onerror = () => socket.close();
  }

  send(payload: unknown): boolean {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(payload));
      return true;
    }
    return false;
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
